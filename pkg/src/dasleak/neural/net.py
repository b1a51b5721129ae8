"""Network definition: architecture spec, parameter init, forward/backward.

The reference architecture is four [Conv -> MaxPool+BatchNorm -> ReLU]
blocks (16/32/64/128 channels, 3x3x3 kernels, same padding), dropout, global
average pooling, and a 128 -> 128 -> 64 -> 2 fully connected stack with a
softmax head.  Depth pool strides are (1, S, 1, 2) with S = 1 for Z = 3 and
S = 2 for Z in {5, 7, 9}.  The 2D variant consumes the center channel slice
(depth 1) with 3x3x1 kernels and unit depth strides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import NumericalError
from . import ops

VARIANT_2D = "cnn2d"
VARIANT_3D = "cnn3d"


@dataclass(frozen=True)
class ArchitectureSpec:
    variant: str = VARIANT_3D
    z: int = 5
    input_bands: int = 90
    input_frames: int = 98
    conv_channels: tuple = (16, 32, 64, 128)
    depth_strides: Optional[tuple] = None     # None -> reference schedule
    fc_dims: tuple = (128, 64, 2)
    dropout_rate: float = 0.3

    def __post_init__(self):
        if self.variant not in (VARIANT_2D, VARIANT_3D):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.z % 2 == 0 or self.z < 1:
            raise ValueError("Z must be odd and positive")
        if self.fc_dims[-1] != 2:
            raise ValueError("final FC dimension must be 2 (leak / non-leak)")

    @property
    def effective_depth(self) -> int:
        # The 2D variant sees only the center channel slice.
        return 1 if self.variant == VARIANT_2D else self.z

    @property
    def kernel_depth(self) -> int:
        return 1 if self.variant == VARIANT_2D else 3

    def pool_windows(self) -> list[tuple]:
        if self.depth_strides is not None:
            strides = self.depth_strides
        elif self.variant == VARIANT_2D:
            strides = (1,) * len(self.conv_channels)
        else:
            s = 1 if self.z == 3 else 2
            base = [1, s, 1, 2]
            strides = tuple(base[:len(self.conv_channels)])
        return [(2, 2, s) for s in strides]

    def shape_trace(self) -> list[tuple]:
        """Activation shapes (X, Y, Z, C) after every block; raises on collapse."""
        x, y, z = self.input_bands, self.input_frames, self.effective_depth
        trace = [(x, y, z, 1)]
        for channels, window in zip(self.conv_channels, self.pool_windows()):
            x, y, z = x // window[0], y // window[1], z // window[2]
            if x == 0 or y == 0 or z == 0:
                raise ValueError(
                    f"architecture collapses to zero dimension at the "
                    f"{channels}-channel block: {(x, y, z)}")
            trace.append((x, y, z, channels))
        return trace

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "z": self.z,
            "input_bands": self.input_bands, "input_frames": self.input_frames,
            "conv_channels": list(self.conv_channels),
            "depth_strides": (None if self.depth_strides is None
                              else list(self.depth_strides)),
            "fc_dims": list(self.fc_dims),
            "dropout_rate": self.dropout_rate,
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchitectureSpec":
        return ArchitectureSpec(
            variant=d["variant"], z=d["z"],
            input_bands=d["input_bands"], input_frames=d["input_frames"],
            conv_channels=tuple(d["conv_channels"]),
            depth_strides=(None if d["depth_strides"] is None
                           else tuple(d["depth_strides"])),
            fc_dims=tuple(d["fc_dims"]),
            dropout_rate=d["dropout_rate"])


def parameter_shapes(spec: ArchitectureSpec) -> dict:
    """Name -> shape map, derivable from the spec alone."""
    shapes = {}
    cin = 1
    kd = spec.kernel_depth
    for i, cout in enumerate(spec.conv_channels, start=1):
        shapes[f"conv{i}/W"] = (3, 3, kd, cin, cout)
        shapes[f"conv{i}/b"] = (cout,)
        shapes[f"bn{i}/gamma"] = (cout,)
        shapes[f"bn{i}/beta"] = (cout,)
        shapes[f"bn{i}/running_mean"] = (cout,)
        shapes[f"bn{i}/running_var"] = (cout,)
        cin = cout
    dims = [spec.conv_channels[-1], *spec.fc_dims]
    for i in range(len(spec.fc_dims)):
        shapes[f"fc{i + 1}/W"] = (dims[i], dims[i + 1])
        shapes[f"fc{i + 1}/b"] = (dims[i + 1],)
    return shapes


TRAINABLE = ("W", "b", "gamma", "beta")


def conv_kernel_names(spec: ArchitectureSpec) -> list[str]:
    return [f"conv{i}/W" for i in range(1, len(spec.conv_channels) + 1)]


@dataclass
class Model:
    spec: ArchitectureSpec
    params: dict = field(default_factory=dict)
    rng_seed: int = 0
    dtype: type = np.float32

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict) -> None:
        for k, v in params.items():
            self.params[k] = v.copy()


def init_model(spec: ArchitectureSpec, seed: int = 0,
               dtype=np.float32) -> Model:
    """He-uniform init for conv/FC weights; BN at identity."""
    spec.shape_trace()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params = {}
    for name, shape in parameter_shapes(spec).items():
        kind = name.split("/")[1]
        if kind == "W":
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, shape).astype(dtype)
        elif kind in ("b", "beta", "running_mean"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:  # gamma, running_var
            params[name] = np.ones(shape, dtype=dtype)
    return Model(spec=spec, params=params, rng_seed=seed, dtype=dtype)


def _prepare_input(model: Model, cubes: np.ndarray) -> np.ndarray:
    """(B, bands, frames, Z) or (B, bands, frames) -> (B, X, Y, D, 1)."""
    x = np.asarray(cubes, dtype=model.dtype)
    if x.ndim == 3:
        x = x[..., None]
    if x.ndim != 4:
        raise ValueError(f"expected (B, bands, frames, Z) input, got {x.shape}")
    spec = model.spec
    if x.shape[1] != spec.input_bands or x.shape[2] != spec.input_frames:
        raise ValueError(f"input spatial dims {x.shape[1:3]} != "
                         f"({spec.input_bands}, {spec.input_frames})")
    if spec.variant == VARIANT_2D:
        if x.shape[3] not in (1, spec.z):
            raise ValueError(f"input depth {x.shape[3]} incompatible with Z={spec.z}")
        if x.shape[3] > 1:
            center = x.shape[3] // 2
            x = x[:, :, :, center:center + 1]
    elif x.shape[3] != spec.z:
        raise ValueError(f"input depth {x.shape[3]} != Z={spec.z}")
    return np.ascontiguousarray(x[..., None])


def _forward_pass(model: Model, x: np.ndarray, train: bool,
                  rng: Optional[np.random.Generator],
                  keep_caches: bool = True):
    """Run the network; returns (logits, caches).

    With ``keep_caches=False`` the per-layer backward caches are dropped as
    soon as each layer finishes, which roughly halves peak memory for
    inference-only passes.
    """
    spec = model.spec
    p = model.params
    caches = [] if keep_caches else None
    a = x
    for i, window in enumerate(spec.pool_windows(), start=1):
        a, c_conv = ops.conv3d_forward(a, p[f"conv{i}/W"], p[f"conv{i}/b"])
        a, c_pool = ops.maxpool3d_forward(a, window)
        a, c_bn = ops.batchnorm_forward(
            a, p[f"bn{i}/gamma"], p[f"bn{i}/beta"],
            p[f"bn{i}/running_mean"], p[f"bn{i}/running_var"], train)
        a, c_relu = ops.relu_forward(a)
        if keep_caches:
            caches.append(("block", i, c_conv, c_pool, c_bn, c_relu))
        c_conv = c_pool = c_bn = c_relu = None
    a, c_drop = ops.dropout_forward(a, spec.dropout_rate, rng, train)
    a, c_gap = ops.global_avg_pool_forward(a)
    if keep_caches:
        caches.append(("dropout", c_drop))
        caches.append(("gap", c_gap))
    n_fc = len(spec.fc_dims)
    for i in range(1, n_fc + 1):
        a, c_fc = ops.dense_forward(a, p[f"fc{i}/W"], p[f"fc{i}/b"])
        if keep_caches:
            caches.append(("fc", i, c_fc))
        if i < n_fc:
            a, c_relu = ops.relu_forward(a)
            if keep_caches:
                caches.append(("fc_relu", i, c_relu))
    return a, caches


def _locate_nonfinite(model: Model, x: np.ndarray, train: bool,
                      rng) -> str:
    """Re-run layer by layer to name the first non-finite activation."""
    spec = model.spec
    p = model.params
    a = x
    for i, window in enumerate(spec.pool_windows(), start=1):
        for name, step in (
                (f"conv{i}", lambda a, i=i: ops.conv3d_forward(
                    a, p[f"conv{i}/W"], p[f"conv{i}/b"])[0]),
                (f"maxpool{i}", lambda a, w=window: ops.maxpool3d_forward(a, w)[0]),
                (f"bn{i}", lambda a, i=i: ops.batchnorm_forward(
                    a, p[f"bn{i}/gamma"], p[f"bn{i}/beta"],
                    p[f"bn{i}/running_mean"].copy(),
                    p[f"bn{i}/running_var"].copy(), train)[0]),
                (f"relu{i}", lambda a: ops.relu_forward(a)[0])):
            a = step(a)
            if not np.isfinite(a).all():
                return name
    return "fc_stack"


def forward(model: Model, cubes: np.ndarray, mode: str = "eval",
            rng: Optional[np.random.Generator] = None,
            batch_size: int = 128) -> np.ndarray:
    """Class probabilities, shape (B, 2); column 1 is the leak probability."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    x = _prepare_input(model, cubes)
    outs = []
    for start in range(0, x.shape[0], batch_size):
        chunk = x[start:start + batch_size]
        logits, _ = _forward_pass(model, chunk, train, rng,
                                  keep_caches=False)
        if not np.isfinite(logits).all():
            layer = _locate_nonfinite(model, chunk, train, rng)
            raise NumericalError(
                f"non-finite activations in layer {layer}", layer=layer)
        outs.append(ops.softmax(logits.astype(np.float64)))
    return np.concatenate(outs, axis=0)


def loss_and_grads(model: Model, cubes: np.ndarray, labels: np.ndarray,
                   l2_penalty: float = 0.0,
                   rng: Optional[np.random.Generator] = None,
                   train: bool = True):
    """Mean cross-entropy (+ L2 on conv kernels) and gradients for all
    trainable parameters."""
    x = _prepare_input(model, cubes)
    labels = np.asarray(labels, dtype=np.int64)
    logits, caches = _forward_pass(model, x, train, rng)
    loss, _, dlogits = ops.softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss",
                             layer=_locate_nonfinite(model, x, train, rng))
    p = model.params
    grads = {}
    if l2_penalty > 0:
        for name in conv_kernel_names(model.spec):
            loss += l2_penalty * float(np.sum(
                p[name].astype(np.float64) ** 2))
    da = dlogits
    spec = model.spec
    for entry in reversed(caches):
        kind = entry[0]
        if kind == "fc":
            _, i, c_fc = entry
            da, dw, db = ops.dense_backward(da, p[f"fc{i}/W"], c_fc)
            grads[f"fc{i}/W"] = dw
            grads[f"fc{i}/b"] = db
        elif kind == "fc_relu":
            da = ops.relu_backward(da, entry[2])
        elif kind == "gap":
            da = ops.global_avg_pool_backward(da, entry[1])
        elif kind == "dropout":
            da = ops.dropout_backward(da, entry[1])
        else:  # conv block
            _, i, c_conv, c_pool, c_bn, c_relu = entry
            da = ops.relu_backward(da, c_relu)
            da, dgamma, dbeta = ops.batchnorm_backward(da, c_bn)
            grads[f"bn{i}/gamma"] = dgamma.astype(model.dtype)
            grads[f"bn{i}/beta"] = dbeta.astype(model.dtype)
            da = ops.maxpool3d_backward(da, c_pool)
            da, dw, db = ops.conv3d_backward(da, p[f"conv{i}/W"], c_conv)
            grads[f"conv{i}/W"] = dw
            grads[f"conv{i}/b"] = db
    if l2_penalty > 0:
        for name in conv_kernel_names(spec):
            grads[name] = grads[name] + (2.0 * l2_penalty) * p[name]
    return loss, grads


def clone_model(model: Model) -> Model:
    return Model(spec=model.spec, params=model.copy_params(),
                 rng_seed=model.rng_seed, dtype=model.dtype)


def parameter_count(spec: ArchitectureSpec, trainable_only: bool = True) -> int:
    total = 0
    for name, shape in parameter_shapes(spec).items():
        kind = name.split("/")[1]
        if trainable_only and kind not in TRAINABLE:
            continue
        total += int(np.prod(shape))
    return total
