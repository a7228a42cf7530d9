"""Discrete power-law fitting and tests with ``xmin = 1``.

Model: ``P(X = x) = x**-alpha / zeta(alpha)`` for integers ``x >= 1``.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, special

from critnca.grid import ParameterError, make_rng

ALPHA_BOUNDS = (1.0 + 1e-6, 10.0)
LEADING_BINS = 10


class InsufficientDataError(ParameterError):
    pass


class DegenerateFitError(ParameterError):
    pass


@dataclass(frozen=True)
class LsqFit:
    slope: float
    intercept: float
    r_squared: float
    bins_used: tuple[int, ...]


@dataclass
class PowerLawFit:
    alpha_hat: float
    ks_statistic: float
    n_samples: int
    xmin: int = 1
    r_squared: float | None = None
    gof_p: float | None = None
    llr: float | None = None
    llr_p: float | None = None

    def to_json(self) -> str:
        d = asdict(self)
        d["D"] = d.pop("ks_statistic")
        return json.dumps(d, sort_keys=True)


def _as_hist(hist) -> dict[int, int]:
    return {int(k): int(v) for k, v in dict(hist).items()}


def count_nonzero_leading_bins(hist, bins: int = LEADING_BINS) -> int:
    hist = _as_hist(hist)
    return sum(1 for v in range(1, bins + 1) if hist.get(v, 0) > 0)


def lsq_loglog_fit(hist, bins: int = LEADING_BINS) -> LsqFit:
    """OLS of log10 probability on log10 value over the nonzero leading bins."""
    hist = _as_hist(hist)
    total = sum(hist.values())
    used = tuple(v for v in range(1, bins + 1) if hist.get(v, 0) > 0)
    if len(used) < 2:
        raise InsufficientDataError(f"need >= 2 nonzero bins among 1..{bins}, got {len(used)}")
    x = np.log10(np.array(used, dtype=float))
    y = np.log10(np.array([hist[v] for v in used], dtype=float) / total)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise DegenerateFitError("zero variance in log values")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    ss_res = np.sum((y - (intercept + slope * x)) ** 2)
    ss_tot = np.sum((y - ym) ** 2)
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else 0.0
    else:
        r2 = float(min(1.0, max(0.0, 1.0 - ss_res / ss_tot)))
    return LsqFit(float(slope), float(intercept), r2, used)


def _samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size and x.min() < 1:
        raise ParameterError("power-law samples must be integers >= 1")
    return x


def _alpha_from_mean_log(mean_log: float) -> float:
    res = optimize.minimize_scalar(
        lambda a: a * mean_log + np.log(special.zeta(a)),
        bounds=ALPHA_BOUNDS,
        method="bounded",
        options={"xatol": 1e-8},
    )
    return float(res.x)


def mle_alpha(samples) -> float:
    """Maximum-likelihood exponent of the discrete power law (xmin = 1)."""
    x = _samples(samples)
    if x.size < 2:
        raise InsufficientDataError("need at least 2 samples")
    if np.all(x == 1):
        raise DegenerateFitError("all samples equal 1; likelihood unbounded in alpha")
    return _alpha_from_mean_log(float(np.mean(np.log(x))))


def powerlaw_cdf(x, alpha: float) -> np.ndarray:
    """``P(X <= x)`` for integer ``x >= 1``."""
    x = np.asarray(x, dtype=np.float64)
    return 1.0 - special.zeta(alpha, x + 1.0) / special.zeta(alpha)


def ks_statistic(samples, alpha: float) -> float:
    """Max |empirical CDF - model CDF| over the observed values."""
    x = _samples(samples)
    if x.size == 0:
        raise InsufficientDataError("no samples")
    values, counts = np.unique(x, return_counts=True)
    emp = np.cumsum(counts) / x.size
    return float(np.max(np.abs(emp - powerlaw_cdf(values, alpha))))


class PowerLawSampler:
    """Exact sampler: inverse CDF over a table, rejection sampling beyond it."""

    def __init__(self, alpha: float, tail_mass: float = 1e-9, max_table: int = 2**20):
        if alpha <= 1:
            raise ParameterError("alpha must exceed 1")
        self.alpha = alpha
        z = special.zeta(alpha)
        # smallest table size whose tail mass is below tail_mass (analytic estimate)
        est = ((alpha - 1) * z * tail_mass) ** (-1.0 / (alpha - 1)) if alpha < 50 else 16.0
        size = int(min(max_table, max(16, np.ceil(est))))
        x = np.arange(1, size + 1, dtype=np.float64)
        self.cdf = np.cumsum(x**-alpha) / z
        self.size = size

    def _tail(self, n: int, rng: np.random.Generator) -> np.ndarray:
        a, k = self.alpha, self.size
        bound = ((k + 2.0) / (k + 1.0)) ** a
        out = np.empty(n)
        filled = 0
        while filled < n:
            m = 2 * (n - filled) + 8
            y = (k + 1.0) * (1.0 - rng.random(m)) ** (-1.0 / (a - 1.0))
            x = np.floor(np.minimum(y, 2.0**62))
            ratio = (a - 1.0) / (x * -np.expm1((1.0 - a) * np.log1p(1.0 / x)))
            keep = x[rng.random(m) * bound <= ratio]
            take = min(keep.size, n - filled)
            out[filled : filled + take] = keep[:take]
            filled += take
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(n)
        idx = np.searchsorted(self.cdf, u, side="right")
        x = (idx + 1).astype(np.float64)
        tail = idx >= self.size
        if tail.any():
            x[tail] = self._tail(int(tail.sum()), rng)
        return x


def sample_powerlaw(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    return PowerLawSampler(alpha).sample(n, rng)


def _bootstrap_chunk(args) -> np.ndarray:
    alpha, n_synth, keys, iterations = args
    sampler = PowerLawSampler(alpha)
    out = np.empty(len(iterations))
    for j, it in enumerate(iterations):
        synth = sampler.sample(n_synth, make_rng(*keys, it))
        try:
            out[j] = ks_statistic(synth, mle_alpha(synth))
        except ParameterError:
            # a failed synthetic fit counts as not exceeding the data
            out[j] = -np.inf
    return out


def bootstrap_ks(alpha: float, seed, n_iter: int = 1000, n_synth: int = 10_000, workers: int = 1) -> np.ndarray:
    """KS statistics of ``n_iter`` refitted synthetic samples from the fitted model.

    ``seed`` is an int or a tuple of ints. Iteration ``k`` draws from the
    stream ``(*seed, k)``, so the result does not depend on ``workers``.
    """
    keys = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    iters = list(range(n_iter))
    if workers <= 1:
        return _bootstrap_chunk((alpha, n_synth, keys, iters))
    chunks = [iters[i::workers] for i in range(workers)]
    out = np.empty(n_iter)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for idx, res in zip(chunks, pool.map(_bootstrap_chunk, [(alpha, n_synth, keys, c) for c in chunks])):
            out[idx] = res
    return out


def run_goodness_of_fit(samples, seed, n_iter: int = 1000, n_synth: int = 10_000, workers: int = 1) -> float:
    """Semi-parametric bootstrap p-value; above 0.1 the power law is plausible."""
    alpha = mle_alpha(samples)
    d_data = ks_statistic(samples, alpha)
    synth = bootstrap_ks(alpha, seed, n_iter, n_synth, workers)
    return float(np.mean(synth >= d_data))


def geometric_fit(samples) -> float:
    """MLE success probability of the geometric law on {1, 2, ...}."""
    x = _samples(samples)
    mean = float(np.mean(x))
    if mean <= 1.0:
        raise DegenerateFitError("all samples equal 1; exponential rate unbounded")
    return 1.0 / mean


def loglikelihood_ratio_vs_exponential(samples, normalized: bool = True) -> tuple[float, float]:
    """Vuong comparison of the power law against the discrete exponential.

    Returns ``(ratio, p)``; a positive ratio favours the power law. With
    ``normalized`` false the raw summed log-likelihood ratio is returned.
    """
    x = _samples(samples)
    if x.size < 2:
        raise InsufficientDataError("need at least 2 samples")
    alpha = mle_alpha(x)
    p_geo = geometric_fit(x)
    ll_pl = -alpha * np.log(x) - np.log(special.zeta(alpha))
    ll_exp = np.log(p_geo) + (x - 1.0) * np.log1p(-p_geo)
    diff = ll_pl - ll_exp
    ratio = float(np.sum(diff))
    sigma = float(np.std(diff))
    n = x.size
    if sigma == 0.0:
        return (0.0 if normalized else ratio), 1.0
    z = ratio / (sigma * np.sqrt(n))
    p = float(special.erfc(abs(z) / np.sqrt(2.0)))
    return (float(z) if normalized else ratio), p


def fit_distribution(samples, seed=None, n_iter: int = 1000, n_synth: int = 10_000,
                     workers: int = 1) -> PowerLawFit:
    """Full report for one distribution; the bootstrap runs only when ``seed`` is given."""
    x = _samples(samples)
    alpha = mle_alpha(x)
    fit = PowerLawFit(alpha, ks_statistic(x, alpha), int(x.size))
    values, counts = np.unique(x.astype(np.int64), return_counts=True)
    try:
        fit.r_squared = lsq_loglog_fit(dict(zip(values.tolist(), counts.tolist()))).r_squared
    except ParameterError:
        fit.r_squared = None
    try:
        fit.llr, fit.llr_p = loglikelihood_ratio_vs_exponential(x)
    except ParameterError:
        pass
    if seed is not None:
        d_synth = bootstrap_ks(alpha, seed, n_iter, n_synth, workers)
        fit.gof_p = float(np.mean(d_synth >= fit.ks_statistic))
    return fit
