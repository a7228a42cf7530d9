"""Linear SVM readout for binary reservoir features.

One-vs-rest, L2-regularised, trained per class by dual coordinate descent
with shrinking (the liblinear algorithm). A constant bias feature of 1 is
appended and regularised along with the weights. Features are 0/1, given
either as a dense uint8 array or as CSR index lists (``BinaryRows``).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from critnca.grid import ParameterError


class ConvergenceWarning(UserWarning):
    pass


class BinaryRows:
    """Row-compressed 0/1 matrix: ``indices[indptr[i]:indptr[i+1]]`` are the ones of row ``i``."""

    def __init__(self, indptr: np.ndarray, indices: np.ndarray, n_features: int):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int32)
        self.n_features = int(n_features)

    @property
    def n_rows(self) -> int:
        return self.indptr.size - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_features

    @classmethod
    def from_dense(cls, x) -> "BinaryRows":
        x = np.asarray(x)
        if x.ndim != 2:
            raise ParameterError("feature matrix must be 2-D")
        if x.size and not np.isin(x, (0, 1)).all():
            raise ParameterError("features must be binary")
        rows, cols = np.nonzero(x)
        indptr = np.zeros(x.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=x.shape[0]), out=indptr[1:])
        return cls(indptr, cols, x.shape[1])

    @classmethod
    def concat(cls, parts: list["BinaryRows"]) -> "BinaryRows":
        if not parts:
            raise ParameterError("nothing to concatenate")
        offsets = np.cumsum([0] + [p.indices.size for p in parts[:-1]])
        indptr = np.concatenate([parts[0].indptr[:1]] + [p.indptr[1:] + o for p, o in zip(parts, offsets)])
        return cls(indptr, np.concatenate([p.indices for p in parts]), parts[0].n_features)

    def subset(self, rows) -> "BinaryRows":
        rows = np.asarray(rows)
        pieces = [self.indices[self.indptr[r]:self.indptr[r + 1]] for r in rows]
        lengths = np.array([p.size for p in pieces], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(lengths)])
        indices = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int32)
        return BinaryRows(indptr, indices, self.n_features)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.uint8)
        for i in range(self.n_rows):
            out[i, self.indices[self.indptr[i]:self.indptr[i + 1]]] = 1
        return out


def as_rows(x) -> BinaryRows:
    return x if isinstance(x, BinaryRows) else BinaryRows.from_dense(x)


_EMPTY_DENSE = np.zeros((0, 0), dtype=np.uint8)
_EMPTY_PTR = np.zeros(1, dtype=np.int64)
_EMPTY_IDX = np.zeros(0, dtype=np.int32)


def _operands(x):
    """``(dense, indptr, indices, n_rows, n_features, is_dense)`` for the numba kernels.

    Dense 0/1 arrays are used as they are (contiguous row loops are faster
    when many features are on); ``BinaryRows`` use the index lists.
    """
    if isinstance(x, BinaryRows):
        return _EMPTY_DENSE, x.indptr, x.indices, x.n_rows, x.n_features, False
    x = np.asarray(x)
    if x.ndim != 2:
        raise ParameterError("feature matrix must be 2-D")
    if x.dtype != np.uint8 or not x.flags.c_contiguous:
        if x.size and not np.isin(x, (0, 1)).all():
            raise ParameterError("features must be binary")
        x = np.ascontiguousarray(x, dtype=np.uint8)
    elif x.size and x.max() > 1:
        raise ParameterError("features must be binary")
    return x, _EMPTY_PTR, _EMPTY_IDX, x.shape[0], x.shape[1], True


# dense kernels are kept out of line so that fastmath (vectorised
# reduction) applies to them and not to the inf sentinels of the solver
@numba.njit(fastmath=True, cache=True)
def _dense_dot(row, w):
    acc = 0.0
    for j in range(row.size):
        acc += row[j] * w[j]
    return acc


@numba.njit(fastmath=True, cache=True)
def _dense_add(row, w, d):
    for j in range(row.size):
        w[j] += d * row[j]


@numba.njit(inline="always")
def _row_dot(dense, indptr, indices, is_dense, i, w):
    if is_dense:
        return _dense_dot(dense[i], w)
    acc = 0.0
    for k in range(indptr[i], indptr[i + 1]):
        acc += w[indices[k]]
    return acc


@numba.njit(inline="always")
def _row_add(dense, indptr, indices, is_dense, i, w, d):
    if is_dense:
        _dense_add(dense[i], w, d)
    else:
        for k in range(indptr[i], indptr[i + 1]):
            w[indices[k]] += d


@numba.njit(cache=True)
def _dual_cd(dense, indptr, indices, is_dense, n, n_features, y, c, squared, tol, max_iter, seed):
    # y in {-1, +1}; returns (w with bias last, iterations)
    w = np.zeros(n_features + 1)
    wf = w[:n_features]
    alpha = np.zeros(n)
    if squared:
        diag = 0.5 / c
        upper = np.inf
    else:
        diag = 0.0
        upper = c
    qd = np.empty(n)
    for i in range(n):
        if is_dense:
            ones = 0.0
            for j in range(n_features):
                ones += dense[i, j]
        else:
            ones = indptr[i + 1] - indptr[i]
        qd[i] = diag + ones + 1.0
    index = np.arange(n)
    active = n
    pg_max_old = np.inf
    pg_min_old = -np.inf
    np.random.seed(seed)
    it = 0
    while it < max_iter:
        pg_max_new = -np.inf
        pg_min_new = np.inf
        for i in range(active):
            j = i + np.random.randint(active - i)
            tmp = index[i]
            index[i] = index[j]
            index[j] = tmp
        s = 0
        while s < active:
            i = index[s]
            yi = y[i]
            dot = w[n_features] + _row_dot(dense, indptr, indices, is_dense, i, wf)
            g = yi * dot - 1.0 + alpha[i] * diag
            pg = 0.0
            if alpha[i] == 0.0:
                if g > pg_max_old:
                    active -= 1
                    tmp = index[s]
                    index[s] = index[active]
                    index[active] = tmp
                    continue
                elif g < 0.0:
                    pg = g
            elif alpha[i] == upper:
                if g < pg_min_old:
                    active -= 1
                    tmp = index[s]
                    index[s] = index[active]
                    index[active] = tmp
                    continue
                elif g > 0.0:
                    pg = g
            else:
                pg = g
            if pg > pg_max_new:
                pg_max_new = pg
            if pg < pg_min_new:
                pg_min_new = pg
            if abs(pg) > 1e-12:
                old = alpha[i]
                new = old - g / qd[i]
                if new < 0.0:
                    new = 0.0
                elif new > upper:
                    new = upper
                alpha[i] = new
                d = (new - old) * yi
                _row_add(dense, indptr, indices, is_dense, i, wf, d)
                w[n_features] += d
            s += 1
        it += 1
        if pg_max_new - pg_min_new <= tol:
            if active == n:
                return w, it
            active = n
            pg_max_old = np.inf
            pg_min_old = -np.inf
            continue
        pg_max_old = pg_max_new if pg_max_new > 0.0 else np.inf
        pg_min_old = pg_min_new if pg_min_new < 0.0 else -np.inf
    return w, it


@numba.njit(cache=True)
def _decision(dense, indptr, indices, is_dense, n, coef, intercept):
    k = coef.shape[0]
    out = np.empty((n, k))
    for i in range(n):
        for c in range(k):
            out[i, c] = intercept[c] + _row_dot(dense, indptr, indices, is_dense, i, coef[c])
    return out


@dataclass
class ReadoutModel:
    coef: np.ndarray
    intercept: np.ndarray
    classes: np.ndarray
    params: dict = field(default_factory=dict)

    def decision_function(self, x) -> np.ndarray:
        dense, indptr, indices, n, nf, is_dense = _operands(x)
        if nf != self.coef.shape[1]:
            raise ParameterError(f"model expects {self.coef.shape[1]} features, got {nf}")
        return _decision(dense, indptr, indices, is_dense, n, np.ascontiguousarray(self.coef), self.intercept)

    def predict(self, x) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class index
        return self.classes[np.argmax(self.decision_function(x), axis=1)]

    def score(self, x, labels) -> float:
        return float(np.mean(self.predict(x) == np.asarray(labels)))


def train_readout(x, labels, c: float = 1.0, loss: str = "hinge", tol: float = 1e-4,
                  max_iter: int = 1000, seed: int = 0) -> ReadoutModel:
    """Fit a one-vs-rest linear SVM on binary features.

    ``loss`` is ``"squared_hinge"`` or ``"hinge"``. Each class problem uses the
    same shuffling seed, so relabelling classes relabels predictions.
    """
    if loss not in ("squared_hinge", "hinge"):
        raise ParameterError(f"unknown loss {loss!r}")
    dense, indptr, indices, n, nf, is_dense = _operands(x)
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ParameterError("labels must match the number of feature rows")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ParameterError("readout training needs at least two classes")
    coef = np.empty((classes.size, nf))
    intercept = np.empty(classes.size)
    iterations = []
    for k, cls in enumerate(classes):
        y = np.where(labels == cls, 1.0, -1.0)
        w, it = _dual_cd(dense, indptr, indices, is_dense, n, nf, y, float(c),
                         loss == "squared_hinge", float(tol), int(max_iter), int(seed) % (2**32))
        coef[k], intercept[k] = w[:-1], w[-1]
        iterations.append(int(it))
    if max(iterations) >= max_iter:
        warnings.warn(f"readout did not converge within {max_iter} iterations", ConvergenceWarning, stacklevel=2)
    params = {"c": c, "loss": loss, "tol": tol, "max_iter": max_iter, "seed": seed, "iterations": iterations}
    return ReadoutModel(coef, intercept, classes, params)
