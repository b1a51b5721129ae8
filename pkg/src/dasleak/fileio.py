"""Binary file formats (little-endian) and atomic write helpers.

Formats:
  DASR  recording   magic "DASR", version u16, channel_count u32, sample_rate f64,
                    channel_spacing f64, samples_per_channel u64, channel-major f32.
  DASF  feature set magic "DASF", version u16, Z u16, bands u16, frames u16,
                    cube_count u64, then per cube: center_channel u32,
                    window_index u32, label u8 (0/1/255), f32 values in
                    (band, frame, z) order.

Truth sidecars, manifests and reports are JSON text.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import DataFormatError

RECORDING_MAGIC = b"DASR"
RECORDING_VERSION = 1
CUBE_MAGIC = b"DASF"
CUBE_VERSION = 1

LABEL_NON_LEAK = 0
LABEL_LEAK = 1
LABEL_UNLABELED = 255


@contextlib.contextmanager
def atomic_write(path, mode="wb"):
    """Write to a temp file in the same directory, rename on success."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _read_exact(fh, n, path, what):
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError(f"{path}: truncated while reading {what}")
    return data


def write_recording(path, samples, sample_rate, channel_spacing):
    """Write channel-major f32 samples, shape (channels, samples_per_channel)."""
    samples = np.ascontiguousarray(samples, dtype="<f4")
    if samples.ndim != 2:
        raise ValueError("samples must be a 2D (channel, time) array")
    header = RECORDING_MAGIC + struct.pack(
        "<HIddQ", RECORDING_VERSION, samples.shape[0],
        float(sample_rate), float(channel_spacing), samples.shape[1])
    with atomic_write(path) as fh:
        fh.write(header)
        fh.write(samples.tobytes())


def read_recording(path):
    """Read a DASR file -> (samples, sample_rate, channel_spacing)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != RECORDING_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected DASR")
        version, channels, rate, spacing, per_channel = struct.unpack(
            "<HIddQ", _read_exact(fh, 30, path, "header"))
        if version != RECORDING_VERSION:
            raise DataFormatError(f"{path}: unsupported DASR version {version}")
        count = channels * per_channel
        raw = _read_exact(fh, count * 4, path, "sample data")
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after sample data")
    # bytearray makes the array writable (callers mutate recordings, e.g.
    # when injecting transients) without a second copy.
    samples = np.frombuffer(bytearray(raw),
                            dtype="<f4").reshape(channels, per_channel)
    return samples, rate, spacing


def write_cubes(path, cubes, z, bands, frames):
    """Write feature cubes.

    ``cubes`` is an iterable of (center_channel, window_index, label, values)
    with values shaped (bands, frames, z); label may be None for unlabeled.
    """
    entries = list(cubes)
    header = CUBE_MAGIC + struct.pack(
        "<HHHHQ", CUBE_VERSION, z, bands, frames, len(entries))
    with atomic_write(path) as fh:
        fh.write(header)
        for center, window, label, values in entries:
            values = np.ascontiguousarray(values, dtype="<f4")
            if values.shape != (bands, frames, z):
                raise ValueError(
                    f"cube shape {values.shape} != {(bands, frames, z)}")
            code = LABEL_UNLABELED if label is None else int(label)
            fh.write(struct.pack("<IIB", int(center), int(window), code))
            fh.write(values.tobytes())


def read_cubes(path):
    """Read a DASF file -> (list of (center, window, label, values), z)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != CUBE_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected DASF")
        version, z, bands, frames, count = struct.unpack(
            "<HHHHQ", _read_exact(fh, 16, path, "header"))
        if version != CUBE_VERSION:
            raise DataFormatError(f"{path}: unsupported DASF version {version}")
        size = bands * frames * z * 4
        out = []
        for i in range(count):
            center, window, code = struct.unpack(
                "<IIB", _read_exact(fh, 9, path, f"cube {i} header"))
            raw = _read_exact(fh, size, path, f"cube {i} data")
            values = np.frombuffer(raw, dtype="<f4").reshape(bands, frames, z)
            label = None if code == LABEL_UNLABELED else int(code)
            out.append((center, window, label, values))
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after last cube")
    return out, z


def write_json(path, obj):
    with atomic_write(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
