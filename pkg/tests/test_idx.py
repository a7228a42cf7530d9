import gzip
import struct

import numpy as np
import pytest

from critnca.idx import DatasetError, load_mnist, read_idx, write_idx


def test_roundtrip_plain_and_gzip(tmp_path):
    imgs = np.arange(2 * 28 * 28, dtype=np.uint8).reshape(2, 28, 28)
    labels = np.array([3, 9], np.uint8)
    for name, arr in [("a-idx3-ubyte", imgs), ("b-idx1-ubyte.gz", labels)]:
        write_idx(tmp_path / name, arr)
        assert np.array_equal(read_idx(tmp_path / name), arr)
    with open(tmp_path / "b-idx1-ubyte.gz", "rb") as fh:
        assert fh.read(2) == b"\x1f\x8b"


def test_header_layout(tmp_path):
    path = tmp_path / "x"
    path.write_bytes(struct.pack(">IIII", 0x803, 1, 2, 2) + bytes([1, 2, 3, 4]))
    assert read_idx(path).tolist() == [[[1, 2], [3, 4]]]


def test_bad_files(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(struct.pack(">II", 0x999, 1) + b"\x00")
    with pytest.raises(DatasetError):
        read_idx(path)
    path.write_bytes(struct.pack(">II", 0x801, 5) + b"\x00")
    with pytest.raises(DatasetError):
        read_idx(path)
    path.write_bytes(b"\x00")
    with pytest.raises(DatasetError):
        read_idx(path)
    with pytest.raises(DatasetError):
        load_mnist(tmp_path)


def test_load_directory(tmp_path):
    rng = np.random.default_rng(0)
    for split, n in (("train", 5), ("t10k", 3)):
        write_idx(tmp_path / f"{split}-images-idx3-ubyte.gz", rng.integers(0, 256, (n, 28, 28)))
        write_idx(tmp_path / f"{split}-labels-idx1-ubyte", rng.integers(0, 10, n))
    data = load_mnist(tmp_path)
    assert data["train"][0].shape == (5, 28, 28) and data["test"][1].shape == (3,)


def test_real_mnist_shapes(mnist):
    assert mnist["train"][0].shape == (60_000, 28, 28) and mnist["test"][0].shape == (10_000, 28, 28)
    assert sorted(np.unique(mnist["train"][1])) == list(range(10))
