import struct

import numpy as np
import pytest

from csb.formats import load_matrix, read_csv, read_f32, write_csv, write_f32


def test_f32_roundtrip_and_header(tmp_path):
    a = np.arange(12, dtype=float).reshape(3, 4) / 7
    p = tmp_path / "a.bin"
    write_f32(p, a)
    raw = p.read_bytes()
    assert raw[:4] == b"CSBD"
    assert struct.unpack("<III", raw[4:16]) == (3, 4, 0)
    assert len(raw) == 16 + 4 * 12
    np.testing.assert_allclose(read_f32(p), a.astype(np.float32))


def test_f32_rejects_truncated_and_bad_magic(tmp_path):
    p = tmp_path / "a.bin"
    write_f32(p, np.ones((2, 2)))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_f32(p)
    p.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError):
        read_f32(p)


def test_csv_roundtrip(tmp_path):
    a = np.random.default_rng(0).standard_normal((5, 3))
    p = tmp_path / "a.csv"
    write_csv(p, a, ["X", "Y", "Z"])
    b, names = read_csv(p)
    assert names == ["X", "Y", "Z"]
    assert np.array_equal(a, b)


def test_load_matrix_detects_format(tmp_path):
    write_f32(tmp_path / "a.bin", np.eye(2))
    write_csv(tmp_path / "a.csv", np.eye(2), ["p", "q"])
    m, names = load_matrix(tmp_path / "a.bin")
    assert names is None and m.shape == (2, 2)
    m, names = load_matrix(tmp_path / "a.csv")
    assert names == ["p", "q"]


def test_csv_name_count_checked(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "a.csv", np.ones((2, 2)), ["only"])
