"""Layer-level checks of the tensor primitives against brute-force
reference implementations and central finite differences."""

import numpy as np
import pytest

from dasleak.neural import ops


def brute_force_conv3d(x, w, b):
    """Six-loop same-padded convolution, the slowest possible way."""
    B, X, Y, Z, cin = x.shape
    k1, k2, k3, _, cout = w.shape
    p1, p2, p3 = k1 // 2, k2 // 2, k3 // 2
    xp = np.pad(x, ((0, 0), (p1, p1), (p2, p2), (p3, p3), (0, 0)))
    out = np.zeros((B, X, Y, Z, cout))
    for i in range(X):
        for j in range(Y):
            for k in range(Z):
                patch = xp[:, i:i + k1, j:j + k2, k:k + k3, :]
                out[:, i, j, k, :] = np.tensordot(
                    patch, w, axes=([1, 2, 3, 4], [0, 1, 2, 3]))
    return out + b


def central_difference(f, x, h=1e-5):
    """Finite-difference gradient of scalar f at x, element by element."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
        it.iternext()
    return grad


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


class TestConv3d:
    @pytest.mark.parametrize("kernel,z", [((3, 3, 3), 5), ((3, 3, 3), 3),
                                          ((3, 3, 1), 1), ((3, 3, 3), 7)])
    def test_forward_matches_brute_force(self, kernel, z, rng):
        x = rng.standard_normal((2, 6, 5, z, 3))
        w = rng.standard_normal(kernel + (3, 4))
        b = rng.standard_normal(4)
        out, _ = ops.conv3d_forward(x, w, b)
        expected = brute_force_conv3d(x, w, b)
        assert rel_err(out, expected) < 1e-12

    def test_forward_chunking_is_transparent(self, rng, monkeypatch):
        # Force a tiny chunk so several GEMMs cover one batch.
        x = rng.standard_normal((7, 4, 4, 3, 2))
        w = rng.standard_normal((3, 3, 3, 2, 3))
        b = rng.standard_normal(3)
        whole, _ = ops.conv3d_forward(x, w, b)
        monkeypatch.setattr(ops, "_COL_BYTES", 1)
        chunked, _ = ops.conv3d_forward(x, w, b)
        np.testing.assert_allclose(chunked, whole, rtol=1e-12)

    @pytest.mark.parametrize("kernel,z", [((3, 3, 3), 5), ((3, 3, 1), 3)])
    def test_gradients(self, kernel, z, rng):
        x = rng.standard_normal((2, 4, 3, z, 2))
        w = rng.standard_normal(kernel + (2, 3))
        b = rng.standard_normal(3)
        dout = rng.standard_normal((2, 4, 3, z, 3))

        out, cache = ops.conv3d_forward(x, w, b)
        dx, dw, db = ops.conv3d_backward(dout, w, cache)

        def loss():
            return float((ops.conv3d_forward(x, w, b)[0] * dout).sum())

        assert rel_err(dx, central_difference(loss, x)) < 1e-7
        assert rel_err(dw, central_difference(loss, w)) < 1e-7
        assert rel_err(db, central_difference(loss, b)) < 1e-7

    def test_rejects_channel_mismatch(self, rng):
        x = rng.standard_normal((1, 4, 4, 3, 2))
        w = rng.standard_normal((3, 3, 3, 5, 4))
        with pytest.raises(ValueError):
            ops.conv3d_forward(x, w, np.zeros(4))


class TestMaxPool:
    def test_forward_matches_naive(self, rng):
        x = rng.standard_normal((2, 6, 4, 4, 3))
        out, _ = ops.maxpool3d_forward(x, (2, 2, 2))
        assert out.shape == (2, 3, 2, 2, 3)
        for i in range(3):
            for j in range(2):
                for k in range(2):
                    block = x[:, 2 * i:2 * i + 2, 2 * j:2 * j + 2,
                              2 * k:2 * k + 2, :]
                    np.testing.assert_array_equal(out[:, i, j, k, :],
                                                  block.max(axis=(1, 2, 3)))

    def test_floor_semantics_drop_odd_tail(self, rng):
        x = rng.standard_normal((1, 5, 5, 3, 2))
        out, _ = ops.maxpool3d_forward(x, (2, 2, 2))
        assert out.shape == (1, 2, 2, 1, 2)

    def test_backward_routes_to_argmax(self, rng):
        x = rng.standard_normal((2, 4, 4, 2, 3))
        out, cache = ops.maxpool3d_forward(x, (2, 2, 2))
        dout = rng.standard_normal(out.shape)
        dx = ops.maxpool3d_backward(dout, cache)
        # Gradient mass is conserved and lands only on maxima.
        assert dx.sum() == pytest.approx(dout.sum(), rel=1e-12)
        assert ((dx != 0) <= (x == np.repeat(np.repeat(np.repeat(
            out, 2, 1), 2, 2), 2, 3))).all()

    def test_tie_goes_to_first_offset(self):
        x = np.zeros((1, 2, 2, 1, 1))
        out, cache = ops.maxpool3d_forward(x, (2, 2, 1))
        dx = ops.maxpool3d_backward(np.ones_like(out), cache)
        assert dx[0, 0, 0, 0, 0] == 1.0
        assert dx.sum() == 1.0

    def test_rejects_collapsing_window(self, rng):
        with pytest.raises(ValueError):
            ops.maxpool3d_forward(rng.standard_normal((1, 4, 4, 1, 2)),
                                  (2, 2, 2))


class TestBatchNorm:
    def test_train_mode_normalizes(self, rng):
        x = rng.standard_normal((8, 3, 3, 2, 4)) * 5 + 2
        gamma, beta = np.ones(4), np.zeros(4)
        rm, rv = np.zeros(4), np.ones(4)
        out, _ = ops.batchnorm_forward(x, gamma, beta, rm, rv, train=True)
        flat = out.reshape(-1, 4)
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-4)

    def test_running_stats_updated_in_place(self, rng):
        x = rng.standard_normal((8, 2, 2, 1, 3)) + 10.0
        rm, rv = np.zeros(3), np.ones(3)
        ops.batchnorm_forward(x, np.ones(3), np.zeros(3), rm, rv, train=True)
        flat = x.reshape(-1, 3)
        np.testing.assert_allclose(rm, 0.1 * flat.mean(axis=0), rtol=1e-10)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * flat.var(axis=0),
                                   rtol=1e-10)

    def test_eval_mode_uses_running_stats(self, rng):
        x = rng.standard_normal((4, 2, 2, 1, 3))
        rm = np.array([1.0, -1.0, 0.5])
        rv = np.array([4.0, 1.0, 0.25])
        out, _ = ops.batchnorm_forward(x, np.ones(3), np.zeros(3),
                                       rm.copy(), rv.copy(), train=False)
        expected = (x - rm) / np.sqrt(rv + 1e-5)
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    @pytest.mark.parametrize("train", [True, False])
    def test_gradients(self, train, rng):
        x = rng.standard_normal((6, 2, 2, 2, 3))
        gamma = rng.standard_normal(3) + 1.5
        beta = rng.standard_normal(3)
        dout = rng.standard_normal(x.shape)

        def loss():
            out, _ = ops.batchnorm_forward(x, gamma, beta, np.zeros(3),
                                           np.ones(3), train)
            return float((out * dout).sum())

        _, cache = ops.batchnorm_forward(x, gamma, beta, np.zeros(3),
                                         np.ones(3), train)
        dx, dgamma, dbeta = ops.batchnorm_backward(dout, cache)
        assert rel_err(dx, central_difference(loss, x)) < 1e-5
        assert rel_err(dgamma, central_difference(loss, gamma)) < 1e-6
        assert rel_err(dbeta, central_difference(loss, beta)) < 1e-6

    def test_rejects_singleton_batch_in_train(self, rng):
        x = rng.standard_normal((1, 2, 2, 1, 3))
        with pytest.raises(ValueError):
            ops.batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3),
                                  np.ones(3), train=True)


class TestSimpleLayers:
    def test_relu(self, rng):
        x = rng.standard_normal((3, 4))
        out, mask = ops.relu_forward(x)
        np.testing.assert_array_equal(out, np.maximum(x, 0))
        dout = rng.standard_normal(x.shape)
        np.testing.assert_array_equal(ops.relu_backward(dout, mask),
                                      dout * (x > 0))

    def test_dropout_eval_is_identity(self, rng):
        x = rng.standard_normal((5, 5))
        out, cache = ops.dropout_forward(x, 0.5, rng, train=False)
        assert out is x and cache is None

    def test_dropout_train_preserves_expectation(self):
        x = np.ones((200, 50))
        rng = np.random.Generator(np.random.PCG64(0))
        out, mask = ops.dropout_forward(x, 0.3, rng, train=True)
        kept = out[out != 0]
        assert np.allclose(kept, 1 / 0.7)
        assert abs(out.mean() - 1.0) < 0.02

    def test_dropout_requires_rng_in_train(self, rng):
        with pytest.raises(ValueError):
            ops.dropout_forward(np.ones((2, 2)), 0.5, None, train=True)

    def test_global_avg_pool(self, rng):
        x = rng.standard_normal((2, 3, 4, 2, 5))
        out, cache = ops.global_avg_pool_forward(x)
        np.testing.assert_allclose(out, x.mean(axis=(1, 2, 3)), rtol=1e-12)
        dout = rng.standard_normal(out.shape)
        dx = ops.global_avg_pool_backward(dout, cache)
        np.testing.assert_allclose(dx.sum(axis=(1, 2, 3)), dout, rtol=1e-12)

    def test_dense_gradients(self, rng):
        x = rng.standard_normal((4, 6))
        w = rng.standard_normal((6, 3))
        b = rng.standard_normal(3)
        dout = rng.standard_normal((4, 3))
        out, cache = ops.dense_forward(x, w, b)
        np.testing.assert_allclose(out, x @ w + b, rtol=1e-12)
        dx, dw, db = ops.dense_backward(dout, w, cache)

        def loss():
            return float((ops.dense_forward(x, w, b)[0] * dout).sum())

        assert rel_err(dx, central_difference(loss, x)) < 1e-8
        assert rel_err(dw, central_difference(loss, w)) < 1e-8
        assert rel_err(db, central_difference(loss, b)) < 1e-8


class TestSoftmaxCrossEntropy:
    def test_softmax_rows_sum_to_one(self, rng):
        logits = rng.standard_normal((7, 2)) * 30
        probs = ops.softmax(logits)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-12)
        assert (probs > 0).all()

    def test_softmax_shift_invariance(self, rng):
        logits = rng.standard_normal((4, 2))
        np.testing.assert_allclose(ops.softmax(logits),
                                   ops.softmax(logits + 1000.0), rtol=1e-9)

    def test_uniform_logits_give_log2(self):
        logits = np.zeros((5, 2))
        loss, _, _ = ops.softmax_cross_entropy(logits, np.zeros(5, dtype=int))
        assert loss == pytest.approx(np.log(2.0), rel=1e-12)

    def test_gradient(self, rng):
        logits = rng.standard_normal((6, 2))
        labels = rng.integers(0, 2, 6)
        _, _, dlogits = ops.softmax_cross_entropy(logits, labels)

        def loss():
            return ops.softmax_cross_entropy(logits, labels)[0]

        assert rel_err(dlogits, central_difference(loss, logits)) < 1e-8

    def test_extreme_logits_stay_finite(self):
        logits = np.array([[800.0, -800.0]])
        loss, probs, dlogits = ops.softmax_cross_entropy(
            logits, np.array([1]))
        assert np.isfinite(loss)
        assert np.isfinite(dlogits).all()
