"""Model checkpoints (binary, little-endian).

Layout: magic "DASM", version u16, spec block (variant u8, Z u16,
dropout f32, layer-table length u32 + JSON layer table), rng_seed u64,
record count u32, then named parameter records: name length u16, name bytes,
rank u8, dims u32 x rank, f32 data.

Loading validates the parameter map against the architecture spec; truncated
files, version mismatches and cross-variant loads are rejected without
producing a partial model.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import DataFormatError
from ..fileio import atomic_write
from . import net

MAGIC = b"DASM"
VERSION = 1
_VARIANT_CODES = {net.VARIANT_2D: 0, net.VARIANT_3D: 1}
_VARIANT_NAMES = {v: k for k, v in _VARIANT_CODES.items()}


def save(model: net.Model, path) -> None:
    spec = model.spec
    table = json.dumps(spec.to_dict(), sort_keys=True).encode()
    with atomic_write(path) as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HBHfI", VERSION, _VARIANT_CODES[spec.variant],
                             spec.z, spec.dropout_rate, len(table)))
        fh.write(table)
        fh.write(struct.pack("<QI", model.rng_seed, len(model.params)))
        for name in sorted(model.params):
            data = np.ascontiguousarray(model.params[name], dtype="<f4")
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def _read_exact(fh, n, path, what):
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError(f"{path}: truncated while reading {what}")
    return data


def load(path, expected_spec: net.ArchitectureSpec | None = None) -> net.Model:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path, "magic") != MAGIC:
            raise DataFormatError(f"{path}: bad magic, expected DASM")
        version, variant_code, z, dropout, table_len = struct.unpack(
            "<HBHfI", _read_exact(fh, 13, path, "spec block"))
        if version != VERSION:
            raise DataFormatError(f"{path}: unsupported DASM version {version}")
        if variant_code not in _VARIANT_NAMES:
            raise DataFormatError(f"{path}: unknown variant code {variant_code}")
        try:
            spec = net.ArchitectureSpec.from_dict(
                json.loads(_read_exact(fh, table_len, path, "layer table")))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataFormatError(f"{path}: invalid layer table ({exc})") from exc
        if spec.variant != _VARIANT_NAMES[variant_code] or spec.z != z:
            raise DataFormatError(f"{path}: spec block disagrees with layer table")
        rng_seed, count = struct.unpack(
            "<QI", _read_exact(fh, 12, path, "parameter count"))
        params = {}
        for i in range(count):
            (name_len,) = struct.unpack(
                "<H", _read_exact(fh, 2, path, f"record {i} name length"))
            name = _read_exact(fh, name_len, path, f"record {i} name").decode()
            (rank,) = struct.unpack(
                "<B", _read_exact(fh, 1, path, f"{name} rank"))
            dims = struct.unpack(
                f"<{rank}I", _read_exact(fh, 4 * rank, path, f"{name} dims"))
            size = int(np.prod(dims)) if rank else 1
            raw = _read_exact(fh, size * 4, path, f"{name} data")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after parameters")

    expected_shapes = net.parameter_shapes(spec)
    if set(params) != set(expected_shapes):
        missing = set(expected_shapes) - set(params)
        extra = set(params) - set(expected_shapes)
        raise DataFormatError(
            f"{path}: parameter set mismatch (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})")
    for name, shape in expected_shapes.items():
        if params[name].shape != shape:
            raise DataFormatError(
                f"{path}: {name} has shape {params[name].shape}, "
                f"expected {shape}")
    if expected_spec is not None and spec != expected_spec:
        raise DataFormatError(
            f"{path}: checkpoint architecture ({spec.variant}, Z={spec.z}) "
            f"does not match the requested one "
            f"({expected_spec.variant}, Z={expected_spec.z})")
    return net.Model(spec=spec, params=params, rng_seed=rng_seed,
                     dtype=np.float32)
