"""Dense-tensor primitives with hand-written backward passes.

Layout is channels-last: activations are (batch, bands, frames, depth,
channels).  Convolutions use same padding and chunked im2col GEMMs; pooling
uses floor semantics with recorded argmax.
"""

from __future__ import annotations

import numpy as np


# Cap on the per-chunk patch-matrix size; keeps the im2col buffer in cache-
# friendly territory while the GEMM inner dimension stays fat.
_COL_BYTES = 192 * 1024 * 1024


def _im2col(xp: np.ndarray, out_shape, kernel):
    """Patch matrix for a padded chunk: rows = output sites, columns =
    (kernel offset, input channel) in C order.

    The depth and channel axes of ``xp`` are adjacent in memory, so the
    (k3, cin) part of every patch is one contiguous block; one strided
    copy per (i, j) offset gathers it.
    """
    X, Y, Z = out_shape
    k1, k2, k3 = kernel
    b, cin = xp.shape[0], xp.shape[-1]
    cols = np.empty((b, X, Y, Z, k1 * k2, k3 * cin), dtype=xp.dtype)
    sb, sx, sy, sz, sc = xp.strides
    m = 0
    for i in range(k1):
        for j in range(k2):
            src = np.lib.stride_tricks.as_strided(
                xp[:, i:, j:], shape=(b, X, Y, Z, k3 * cin),
                strides=(sb, sx, sy, sz, sc))
            cols[:, :, :, :, m, :] = src
            m += 1
    return cols.reshape(b * X * Y * Z, k1 * k2 * k3 * cin)


def _conv_chunk(x_shape, w_shape, itemsize) -> int:
    _, X, Y, Z, cin = x_shape
    k1, k2, k3 = w_shape[:3]
    if _merged_depth(w_shape):
        per_sample = X * Y * 9 * (Z + 2) * cin * itemsize
    else:
        per_sample = X * Y * Z * k1 * k2 * k3 * cin * itemsize
    return max(1, _COL_BYTES // max(per_sample, 1))


def _merged_depth(w_shape) -> bool:
    """3x3x3 kernels admit a cheaper formulation that folds the depth axis
    into the GEMM channel dimension: a fatter inner dimension, one patch
    copy per planar offset, and contiguous copy runs."""
    return w_shape[:3] == (3, 3, 3)


def _merged_kernel(w: np.ndarray, z: int) -> np.ndarray:
    """Block-banded planar kernel: (9 * Zp * Cin, Z * Cout), Zp = Z + 2."""
    k3, cin, cout = w.shape[2], w.shape[3], w.shape[4]
    zp = z + 2
    wp = np.zeros((9, zp * cin, z * cout), dtype=w.dtype)
    for k in range(k3):
        for zz in range(z):
            wp[:, (zz + k) * cin:(zz + k + 1) * cin,
               zz * cout:(zz + 1) * cout] = w[:, :, k].reshape(9, cin, cout)
    return wp.reshape(9 * zp * cin, z * cout)


def _im2col_merged(xq: np.ndarray, out_xy):
    """Planar patch matrix: rows = (b, x, y), columns = (offset, depth x
    channel); ``xq`` is the padded input with depth and channels merged."""
    X, Y = out_xy
    b, zc = xq.shape[0], xq.shape[-1]
    cols = np.empty((b, X, Y, 9, zc), dtype=xq.dtype)
    m = 0
    for i in range(3):
        for j in range(3):
            cols[:, :, :, m, :] = xq[:, i:i + X, j:j + Y, :]
            m += 1
    return cols.reshape(b * X * Y, 9 * zc)


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded 3D convolution via chunked im2col + one GEMM per chunk.

    x: (B, X, Y, Z, Cin); w: (k1, k2, k3, Cin, Cout); b: (Cout,).
    Returns (out, cache).
    """
    B, X, Y, Z, cin = x.shape
    k1, k2, k3, wcin, cout = w.shape
    if wcin != cin:
        raise ValueError(f"kernel expects {wcin} input channels, got {cin}")
    p1, p2, p3 = k1 // 2, k2 // 2, k3 // 2
    xp = np.pad(x, ((0, 0), (p1, p1), (p2, p2), (p3, p3), (0, 0)))
    out = np.empty((B, X, Y, Z, cout), dtype=x.dtype)
    step = _conv_chunk(x.shape, w.shape, x.itemsize)
    if _merged_depth(w.shape):
        xq = xp.reshape(B, X + 2, Y + 2, (Z + 2) * cin)
        wmat = _merged_kernel(w, Z)
        for s in range(0, B, step):
            e = min(s + step, B)
            cols = _im2col_merged(xq[s:e], (X, Y))
            out[s:e] = (cols @ wmat).reshape(e - s, X, Y, Z, cout)
    else:
        wmat = w.reshape(k1 * k2 * k3 * cin, cout)
        for s in range(0, B, step):
            e = min(s + step, B)
            cols = _im2col(xp[s:e], (X, Y, Z), (k1, k2, k3))
            out[s:e] = (cols @ wmat).reshape(e - s, X, Y, Z, cout)
    out += b
    return out, (xp, x.shape, w.shape)


def conv3d_backward(dout: np.ndarray, w: np.ndarray, cache):
    xp, x_shape, w_shape = cache
    B, X, Y, Z, cin = x_shape
    k1, k2, k3, _, cout = w_shape
    p1, p2, p3 = k1 // 2, k2 // 2, k3 // 2
    db = dout.sum(axis=(0, 1, 2, 3))
    step = _conv_chunk(x_shape, w_shape, xp.itemsize)
    dxp = np.zeros_like(xp)
    if _merged_depth(w_shape):
        zp = Z + 2
        xq = xp.reshape(B, X + 2, Y + 2, zp * cin)
        dxq = dxp.reshape(B, X + 2, Y + 2, zp * cin)
        wmat = _merged_kernel(w, Z)
        dwmat = np.zeros_like(wmat, dtype=np.result_type(w, dout))
        for s in range(0, B, step):
            e = min(s + step, B)
            cols = _im2col_merged(xq[s:e], (X, Y))
            dflat = dout[s:e].reshape(-1, Z * cout)
            dwmat += cols.T @ dflat
            dcols = (dflat @ wmat.T).reshape(e - s, X, Y, 9, zp * cin)
            m = 0
            for i in range(3):
                for j in range(3):
                    dxq[s:e, i:i + X, j:j + Y, :] += dcols[:, :, :, m, :]
                    m += 1
        dwp = dwmat.reshape(9, zp * cin, Z * cout)
        dw = np.zeros_like(w, dtype=dwmat.dtype)
        for k in range(k3):
            for zz in range(Z):
                dw[:, :, k] += dwp[:, (zz + k) * cin:(zz + k + 1) * cin,
                                   zz * cout:(zz + 1) * cout].reshape(
                                       3, 3, cin, cout)
    else:
        kk = k1 * k2 * k3
        wmat = w.reshape(kk * cin, cout)
        dwmat = np.zeros((kk * cin, cout), dtype=np.result_type(w, dout))
        sb, sx, sy, sz, sc = dxp.strides
        for s in range(0, B, step):
            e = min(s + step, B)
            cols = _im2col(xp[s:e], (X, Y, Z), (k1, k2, k3))
            dflat = dout[s:e].reshape(-1, cout)
            dwmat += cols.T @ dflat
            dcols = (dflat @ wmat.T).reshape(e - s, X, Y, Z,
                                             k1 * k2, k3 * cin)
            m = 0
            for i in range(k1):
                for j in range(k2):
                    # Depth windows of consecutive z overlap; striding the
                    # scatter by k3 keeps each in-place add overlap-free.
                    for g in range(min(k3, Z)):
                        nz = len(range(g, Z, k3))
                        dst = np.lib.stride_tricks.as_strided(
                            dxp[s:e, i:i + X, j:j + Y, g:, :],
                            shape=(e - s, X, Y, nz, k3 * cin),
                            strides=(sb, sx, sy, k3 * sz, sc))
                        dst += dcols[:, :, :, g::k3, m, :]
                    m += 1
        dw = dwmat.reshape(w_shape)
    dx = dxp[:, p1:p1 + X, p2:p2 + Y, p3:p3 + Z, :]
    return np.ascontiguousarray(dx), dw.astype(w.dtype), db


def _pool_views(x: np.ndarray, window):
    """Strided sub-views of x, one per in-window offset, in C order."""
    w1, w2, w3 = window
    X2 = x.shape[1] // w1
    Y2 = x.shape[2] // w2
    Z2 = x.shape[3] // w3
    views = []
    for i in range(w1):
        for j in range(w2):
            for k in range(w3):
                views.append(x[:, i:X2 * w1:w1, j:Y2 * w2:w2,
                               k:Z2 * w3:w3, :])
    return views


def maxpool3d_forward(x: np.ndarray, window):
    """Max pooling, stride = window, floor semantics.  window = (2, 2, s).

    Ties go to the first in-window offset in C order.
    """
    w1, w2, w3 = window
    B, X, Y, Z, C = x.shape
    if X // w1 == 0 or Y // w2 == 0 or Z // w3 == 0:
        raise ValueError(f"pool window {window} collapses input {(X, Y, Z)} "
                         "to a zero dimension")
    views = _pool_views(x, window)
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)
    return out, (x, out, window)


def maxpool3d_backward(dout: np.ndarray, cache):
    x, out, window = cache
    dx = np.zeros_like(x, dtype=dout.dtype)
    unclaimed = np.ones(dout.shape, dtype=bool)
    for xv, dv in zip(_pool_views(x, window), _pool_views(dx, window)):
        sel = (xv == out) & unclaimed
        dv += dout * sel
        unclaimed &= ~sel
    return dx


def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      train: bool, momentum: float = 0.9, eps: float = 1e-5):
    """Per-channel batch normalization over all non-channel axes.

    In train mode updates running statistics in place and normalizes by batch
    statistics; in eval mode uses the running statistics.
    """
    axes = tuple(range(x.ndim - 1))
    if train:
        count = int(np.prod([x.shape[a] for a in axes]))
        if x.shape[0] < 2:
            raise ValueError("batchnorm train mode requires batch >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        count = None
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    cache = (xhat, inv_std.astype(x.dtype), gamma, axes, count, train)
    return out, cache


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, axes, count, train = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    if not train:
        return dout * gamma * inv_std, dgamma, dbeta
    dxhat = dout * gamma
    dx = (inv_std / count) * (
        count * dxhat
        - dxhat.sum(axis=axes)
        - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def dropout_forward(x, rate: float, rng: np.random.Generator | None,
                    train: bool):
    """Inverted dropout; eval mode (or rate 0) is the identity."""
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout requires an RNG")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    if mask is None:
        return dout
    return dout * mask


def global_avg_pool_forward(x):
    """Average over all spatial axes: (B, X, Y, Z, C) -> (B, C)."""
    axes = tuple(range(1, x.ndim - 1))
    count = int(np.prod([x.shape[a] for a in axes]))
    return x.mean(axis=axes), (x.shape, count)


def global_avg_pool_backward(dout, cache):
    x_shape, count = cache
    B, C = dout.shape
    dx = np.broadcast_to(dout.reshape(B, 1, 1, 1, C), x_shape) / count
    return dx.astype(dout.dtype)


def dense_forward(x, w, b):
    return x @ w + b, x


def dense_backward(dout, w, x):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(logits):
    """Numerically stable row softmax."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch; returns (loss, probs, dlogits)."""
    probs = softmax(logits.astype(np.float64))
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, probs, dlogits.astype(logits.dtype)
