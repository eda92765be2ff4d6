import numpy as np
import pytest

from sourceridge.errors import DataError
from sourceridge.matrixio import (
    is_sbrm,
    read_blob_file,
    read_csv_matrix,
    read_kv,
    read_sbrm,
    write_blob_file,
    write_csv_matrix,
    write_kv,
    write_sbrm,
)


def test_sbrm_round_trip_bit_exact(tmp_path, rng):
    mat = rng.standard_normal((7, 13))
    mat[0, 0] = np.pi
    mat[3, 5] = 1e-308  # subnormal-adjacent values must survive
    path = tmp_path / "m.sbrm"
    write_sbrm(path, mat)
    back = read_sbrm(path)
    assert back.shape == (7, 13)
    assert np.array_equal(back, mat)
    assert back.tobytes() == mat.tobytes()


def test_sbrm_vector_becomes_row(tmp_path):
    write_sbrm(tmp_path / "v.sbrm", np.arange(4.0))
    assert read_sbrm(tmp_path / "v.sbrm").shape == (1, 4)


def test_sbrm_magic_check(tmp_path):
    path = tmp_path / "x.sbrm"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    assert not is_sbrm(path)
    with pytest.raises(DataError, match="magic"):
        read_sbrm(path)


def test_sbrm_truncation(tmp_path):
    mat = np.ones((3, 3))
    path = tmp_path / "t.sbrm"
    write_sbrm(path, mat)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match="short"):
        read_sbrm(path)


def test_csv_with_header(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("a,b,c\n1,2,3\n4,5,6\n")
    mat, names = read_csv_matrix(path)
    assert names == ["a", "b", "c"]
    assert np.array_equal(mat, [[1, 2, 3], [4, 5, 6]])


def test_csv_without_header(tmp_path):
    path = tmp_path / "n.csv"
    path.write_text("1.5,2\n-3,4e2\n")
    mat, names = read_csv_matrix(path)
    assert names is None
    assert np.array_equal(mat, [[1.5, 2], [-3, 400]])


def test_csv_ragged_row_rejected(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("1,2\n3\n")
    with pytest.raises(DataError, match="fields"):
        read_csv_matrix(path)


def test_csv_write_read_17_digits(tmp_path, rng):
    mat = rng.standard_normal((4, 3))
    path = tmp_path / "w.csv"
    write_csv_matrix(path, mat)
    back, _ = read_csv_matrix(path)
    assert np.array_equal(back, mat)


def test_kv_round_trip(tmp_path):
    path = tmp_path / "c.kv"
    write_kv(path, {"alpha": 1.25, "name": "x", "dims": [2, 3]})
    back = read_kv(path)
    assert back == {"alpha": "1.25", "name": "x", "dims": "2,3"}


def test_kv_comments_and_blank_lines(tmp_path):
    path = tmp_path / "c.kv"
    path.write_text("# comment\n\nkey = value  # trailing\n")
    assert read_kv(path) == {"key": "value"}


def test_blob_file_round_trip(tmp_path, rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal(6)
    path = tmp_path / "f.blob"
    write_blob_file(path, {"kind": "test", "count": 2, "scale": 0.5}, {"a": a, "b": b})
    header, blobs = read_blob_file(path)
    assert header["kind"] == "test"
    assert header["scale"] == "0.5"
    assert np.array_equal(blobs["a"], a)
    assert np.array_equal(blobs["b"].ravel(), b)
