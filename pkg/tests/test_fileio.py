import os

import numpy as np
import pytest

from dasleak import fileio
from dasleak.errors import DataFormatError


class TestRecordings:
    def test_roundtrip_bit_exact(self, tmp_path, rng):
        samples = rng.standard_normal((5, 1000)).astype(np.float32)
        path = tmp_path / "rec.dasr"
        fileio.write_recording(path, samples, 10000.0, 0.8)
        back, rate, spacing = fileio.read_recording(path)
        assert rate == 10000.0 and spacing == 0.8
        np.testing.assert_array_equal(back, samples)
        assert back.dtype == np.float32

    def test_rewrite_is_byte_identical(self, tmp_path, rng):
        samples = rng.standard_normal((3, 64)).astype(np.float32)
        a, b = tmp_path / "a.dasr", tmp_path / "b.dasr"
        fileio.write_recording(a, samples, 10000.0, 0.8)
        fileio.write_recording(b, samples, 10000.0, 0.8)
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_rejected(self, tmp_path, rng):
        samples = rng.standard_normal((3, 64)).astype(np.float32)
        path = tmp_path / "rec.dasr"
        fileio.write_recording(path, samples, 10000.0, 0.8)
        data = path.read_bytes()
        for cut in (2, 20, len(data) - 5):
            bad = tmp_path / "bad.dasr"
            bad.write_bytes(data[:cut])
            with pytest.raises(DataFormatError):
                fileio.read_recording(bad)

    def test_bad_magic_rejected(self, tmp_path, rng):
        path = tmp_path / "rec.dasr"
        fileio.write_recording(path, np.zeros((2, 4), np.float32), 1.0, 1.0)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(DataFormatError):
            fileio.read_recording(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "rec.dasr"
        fileio.write_recording(path, np.zeros((2, 4), np.float32), 1.0, 1.0)
        with open(path, "ab") as fh:
            fh.write(b"\x00")
        with pytest.raises(DataFormatError):
            fileio.read_recording(path)


class TestCubes:
    def _cubes(self, rng, n=4, shape=(6, 7, 3)):
        return [(i, i * 2, [0, 1, None][i % 3],
                 rng.standard_normal(shape).astype(np.float32))
                for i in range(n)]

    def test_roundtrip(self, tmp_path, rng):
        entries = self._cubes(rng)
        path = tmp_path / "cubes.dasf"
        fileio.write_cubes(path, entries, 3, 6, 7)
        back, z = fileio.read_cubes(path)
        assert z == 3
        assert len(back) == len(entries)
        for (c0, w0, l0, v0), (c1, w1, l1, v1) in zip(entries, back):
            assert (c0, w0, l0) == (c1, w1, l1)
            np.testing.assert_array_equal(v0, v1)

    def test_wrong_shape_rejected(self, tmp_path, rng):
        entries = [(0, 0, 1, rng.standard_normal((5, 7, 3)))]
        with pytest.raises(ValueError):
            fileio.write_cubes(tmp_path / "c.dasf", entries, 3, 6, 7)

    def test_truncation_rejected(self, tmp_path, rng):
        path = tmp_path / "cubes.dasf"
        fileio.write_cubes(path, self._cubes(rng), 3, 6, 7)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(DataFormatError):
            fileio.read_cubes(path)


class TestJson:
    def test_roundtrip(self, tmp_path):
        obj = {"b": [1, 2, 3], "a": {"nested": None}}
        path = tmp_path / "x.json"
        fileio.write_json(path, obj)
        assert fileio.read_json(path) == obj

    def test_sorted_keys_stable_bytes(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        fileio.write_json(a, {"x": 1, "y": 2})
        fileio.write_json(b, {"y": 2, "x": 1})
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text("{not json")
        with pytest.raises(DataFormatError):
            fileio.read_json(path)


class TestAtomicWrite:
    def test_failure_leaves_no_file(self, tmp_path):
        path = tmp_path / "out.bin"
        with pytest.raises(RuntimeError):
            with fileio.atomic_write(path) as fh:
                fh.write(b"partial")
                raise RuntimeError("boom")
        assert not path.exists()
        assert not [p for p in os.listdir(tmp_path) if p.startswith(".tmp")]

    def test_overwrites_atomically(self, tmp_path):
        path = tmp_path / "out.bin"
        path.write_bytes(b"old")
        with fileio.atomic_write(path) as fh:
            fh.write(b"new")
        assert path.read_bytes() == b"new"


def test_file_digest_is_sha256(self_path=__file__):
    import hashlib
    digest = fileio.file_digest(self_path)
    with open(self_path, "rb") as fh:
        assert digest == hashlib.sha256(fh.read()).hexdigest()
