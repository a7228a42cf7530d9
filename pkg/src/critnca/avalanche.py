"""Avalanches: maximal same-state clusters in a space-time raster.

Two sites ``(t, i)`` and ``(t', i')`` touch when ``|t - t'| <= 1`` and
``i' - i`` is -1, 0 or +1 modulo the width (space wraps, time does not).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from critnca.grid import ParameterError

METRICS = ("size", "duration", "area")
STATES = (0, 1)


@dataclass(frozen=True)
class Avalanche:
    state: int
    size: int
    duration: int
    area: int
    cells: frozenset | None = None


@numba.njit(cache=True)
def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


@numba.njit(cache=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra != rb:
        if ra < rb:
            parent[rb] = ra
        else:
            parent[ra] = rb


@numba.njit(cache=True)
def _label(m):
    n_t, n_x = m.shape
    parent = np.arange(n_t * n_x)
    for t in range(n_t):
        for i in range(n_x):
            v = m[t, i]
            a = t * n_x + i
            il = i - 1 if i > 0 else n_x - 1
            if m[t, il] == v:
                _union(parent, a, t * n_x + il)
            if t > 0:
                for d in (-1, 0, 1):
                    j = (i + d) % n_x
                    if m[t - 1, j] == v:
                        _union(parent, a, (t - 1) * n_x + j)
    labels = np.empty(n_t * n_x, dtype=np.int64)
    for a in range(n_t * n_x):
        labels[a] = _find(parent, a)
    return labels.reshape(n_t, n_x)


@numba.njit(cache=True)
def _measure(m, labels):
    n_t, n_x = m.shape
    n = n_t * n_x
    area = np.zeros(n, dtype=np.int64)
    size = np.zeros(n, dtype=np.int64)
    t_min = np.full(n, n_t, dtype=np.int64)
    t_max = np.full(n, -1, dtype=np.int64)
    last_col = np.full(n, -1, dtype=np.int64)
    # column-major sweep so each component counts a column at most once
    for i in range(n_x):
        for t in range(n_t):
            r = labels[t, i]
            area[r] += 1
            if last_col[r] != i:
                last_col[r] = i
                size[r] += 1
            if t < t_min[r]:
                t_min[r] = t
            if t > t_max[r]:
                t_max[r] = t
    roots = np.nonzero(area)[0]
    k = roots.shape[0]
    out = np.empty((k, 4), dtype=np.int64)
    for idx in range(k):
        r = roots[idx]
        out[idx, 0] = m[r // n_x, r % n_x]
        out[idx, 1] = size[r]
        out[idx, 2] = t_max[r] - t_min[r] + 1
        out[idx, 3] = area[r]
    return out


def _check(matrix) -> np.ndarray:
    m = np.ascontiguousarray(matrix, dtype=np.uint8)
    if m.ndim != 2 or m.size == 0:
        raise ParameterError(f"avalanche matrix must be 2-D and nonempty, got shape {m.shape}")
    return m


def label_avalanches(matrix: np.ndarray) -> np.ndarray:
    """Component label of every site (label = smallest flat index in the component)."""
    return _label(_check(matrix))


def avalanche_table(matrix: np.ndarray) -> np.ndarray:
    """``(k, 4)`` int array of ``(state, size, duration, area)`` per avalanche."""
    m = _check(matrix)
    return _measure(m, _label(m))


def extract_avalanches(matrix: np.ndarray, with_cells: bool = False) -> list[Avalanche]:
    m = _check(matrix)
    labels = _label(m)
    rows = _measure(m, labels)
    cells = {}
    if with_cells:
        for (t, i), r in np.ndenumerate(labels):
            cells.setdefault(r, set()).add((t, i))
    out = []
    roots = np.unique(labels)
    for r, (state, size, duration, area) in zip(roots, rows):
        out.append(Avalanche(int(state), int(size), int(duration), int(area),
                             frozenset(cells[r]) if with_cells else None))
    return out


class AvalancheDistributions:
    """Six integer histograms keyed by ``(state, metric)``; each maps value -> count."""

    def __init__(self, samples: dict[tuple[int, str], np.ndarray]):
        self.samples = {key: np.asarray(samples.get(key, ()), dtype=np.int64)
                        for key in self.keys()}

    @staticmethod
    def keys() -> list[tuple[int, str]]:
        return [(s, m) for s in STATES for m in METRICS]

    @classmethod
    def from_table(cls, table: np.ndarray) -> "AvalancheDistributions":
        table = np.asarray(table).reshape(-1, 4)
        samples = {}
        for s in STATES:
            rows = table[table[:, 0] == s]
            for j, metric in enumerate(METRICS, start=1):
                samples[(s, metric)] = rows[:, j]
        return cls(samples)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "AvalancheDistributions":
        return cls.from_table(avalanche_table(matrix))

    def histogram(self, state: int, metric: str) -> dict[int, int]:
        values, counts = np.unique(self.samples[(state, metric)], return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def histograms(self) -> dict[tuple[int, str], dict[int, int]]:
        return {key: self.histogram(*key) for key in self.keys()}

    def count(self, state: int) -> int:
        return int(self.samples[(state, "area")].size)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["state", "metric", "value", "count"])
            for (s, metric), hist in self.histograms().items():
                for value, count in hist.items():
                    writer.writerow([s, metric, value, count])


def build_distributions(avalanches) -> AvalancheDistributions:
    """Histograms from a list of :class:`Avalanche` or an avalanche table."""
    if isinstance(avalanches, np.ndarray):
        return AvalancheDistributions.from_table(avalanches)
    rows = np.array([(a.state, a.size, a.duration, a.area) for a in avalanches], dtype=np.int64)
    return AvalancheDistributions.from_table(rows.reshape(-1, 4))
