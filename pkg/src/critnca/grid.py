"""Binary multi-channel 1D grids, seeded randomness and raster I/O.

A grid state is a ``(width, channels)`` uint8 array; a space-time raster is
a ``(steps, width, channels)`` uint8 array, time first.
"""
from __future__ import annotations

from collections.abc import Iterable
from pathlib import Path

import numpy as np


class ParameterError(ValueError):
    """Invalid argument to a domain operation."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and an optional stream key path.

    Streams with different ``keys`` are statistically independent, so work
    can be split across workers without changing any draw.
    """
    if seed < 0 or seed >= 2**64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def validate_state(state: np.ndarray) -> None:
    if state.ndim != 2:
        raise ParameterError(f"grid state must be 2-D (width, channels), got shape {state.shape}")
    if state.shape[0] < 3 or state.shape[1] < 1:
        raise ParameterError(f"grid needs width >= 3 and channels >= 1, got {state.shape}")
    if state.size and state.max() > 1:
        raise ParameterError("grid cells must be 0 or 1")


def init_grid(
    width: int,
    channels: int,
    density: float,
    channel_mask: Iterable[int] = (0,),
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Grid whose masked channels are Bernoulli(``density``) and the rest zero."""
    if width < 3 or channels < 1:
        raise ParameterError(f"invalid grid size width={width} channels={channels}")
    if not 0.0 <= density <= 1.0:
        raise ParameterError(f"density must lie in [0, 1], got {density}")
    mask = sorted(set(channel_mask))
    if any(c < 0 or c >= channels for c in mask):
        raise ParameterError(f"channel mask {mask} out of range for {channels} channels")
    state = np.zeros((width, channels), dtype=np.uint8)
    if density == 0.0 or not mask:
        return state
    if density == 1.0:
        state[:, mask] = 1
        return state
    if rng is None:
        raise ParameterError("a random generator is required for 0 < density < 1")
    for c in mask:
        state[:, c] = rng.random(width) < density
    return state


def extract_channel(raster: np.ndarray, channel: int) -> np.ndarray:
    """Time history ``(T, N)`` of one channel of a ``(T, N, C)`` raster."""
    if raster.ndim != 3:
        raise ParameterError(f"raster must be 3-D (T, N, C), got shape {raster.shape}")
    if not 0 <= channel < raster.shape[2]:
        raise ParameterError(f"channel {channel} out of range for {raster.shape[2]} channels")
    return raster[:, :, channel]


def export_raster_bitmap(matrix: np.ndarray, path: str | Path) -> None:
    """Write a binary matrix as a raw PBM (P4) image; 1 is black, rows are time."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ParameterError(f"bitmap matrix must be 2-D and nonempty, got shape {matrix.shape}")
    rows, cols = matrix.shape
    packed = np.packbits(matrix.astype(bool), axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{cols} {rows}\n".encode("ascii"))
        fh.write(packed.tobytes())


def read_bitmap(path: str | Path) -> np.ndarray:
    """Parse a PBM file (P1 or P4) into a uint8 matrix."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    # header: magic, width, height; '#' comments allowed
    while len(tokens) < 3:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, cols, rows = tokens[0], int(tokens[1]), int(tokens[2])
    if magic == b"P4":
        pos += 1
        row_bytes = (cols + 7) // 8
        raw = np.frombuffer(data[pos : pos + rows * row_bytes], dtype=np.uint8)
        bits = np.unpackbits(raw.reshape(rows, row_bytes), axis=1)
        return bits[:, :cols].copy()
    if magic == b"P1":
        digits = [ch - 48 for ch in data[pos:] if ch in (48, 49)]
        return np.array(digits, dtype=np.uint8).reshape(rows, cols)
    raise ParameterError(f"not a PBM file: magic {magic!r}")
