"""MNIST IDX files (optionally gzip-compressed)."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DatasetError(IOError):
    """Malformed or missing dataset file."""


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path: str | Path) -> np.ndarray:
    """Parse an unsigned-byte IDX image (rank 3) or label (rank 1) file."""
    data = _read_bytes(Path(path))
    if len(data) < 8:
        raise DatasetError(f"{path}: truncated header")
    magic = struct.unpack(">I", data[:4])[0]
    if magic == IMAGES_MAGIC:
        count, rows, cols = struct.unpack(">III", data[4:16])
        shape, offset = (count, rows, cols), 16
    elif magic == LABELS_MAGIC:
        (count,) = struct.unpack(">I", data[4:8])
        shape, offset = (count,), 8
    else:
        raise DatasetError(f"{path}: bad magic number {magic:#010x}")
    n = int(np.prod(shape))
    if len(data) - offset != n:
        raise DatasetError(f"{path}: expected {n} payload bytes, found {len(data) - offset}")
    return np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(shape)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise DatasetError(f"{stem}[.gz] not found in {directory}")


def load_mnist(directory: str | Path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """``{"train": (images, labels), "test": (images, labels)}`` with images (n, 28, 28) uint8."""
    directory = Path(directory)
    out = {}
    for split, (img_stem, lab_stem) in _FILES.items():
        images = read_idx(_find(directory, img_stem))
        labels = read_idx(_find(directory, lab_stem))
        if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
            raise DatasetError(f"{split}: image/label files disagree")
        out[split] = (images, labels)
    return out


def write_idx(path: str | Path, array: np.ndarray, compress: bool | None = None) -> None:
    """Write uint8 images (n, r, c) or labels (n,) in IDX format."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if array.ndim == 3:
        header = struct.pack(">IIII", IMAGES_MAGIC, *array.shape)
    elif array.ndim == 1:
        header = struct.pack(">II", LABELS_MAGIC, array.shape[0])
    else:
        raise ValueError("IDX arrays must be rank 1 or 3")
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())
