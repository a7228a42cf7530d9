"""Composite criticality fitness of a genome.

Six avalanche distributions (size, duration, area for states 0 and 1) are
scored for power-law likeness and folded into one number ``S``:

    S_partial = r2_hat**2 + d_hat**2 + b_hat + u
    S = S_partial + l_hat   if S_partial > gate else S_partial

Each ``*_hat`` squashes six per-distribution values, weighting the better
state's mean by 0.9 and the overall mean by 0.1.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from critnca.avalanche import AvalancheDistributions, avalanche_table
from critnca.grid import ParameterError, init_grid
from critnca.nca import Genome, TableRule, encode_states
from critnca.powerlaw import (
    count_nonzero_leading_bins,
    ks_statistic,
    loglikelihood_ratio_vs_exponential,
    lsq_loglog_fit,
    mle_alpha,
)


@dataclass(frozen=True)
class FitnessConfig:
    alpha_r2: float = 0.01
    alpha_d: float = 1.0
    alpha_b: float = 5.0
    alpha_l: float = 0.01
    gate: float = 3.0
    required_nonzero_bins: int = 6
    llr_p_max: float = 0.1
    grid: int = 1000
    steps: int = 1000
    density: float = 0.5
    # R^2 enters the sigmoid on a 0-100 scale
    r2_scale: float = 100.0
    unique_channel0_only: bool = False

    def __post_init__(self):
        for name in ("alpha_r2", "alpha_d", "alpha_b", "alpha_l"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "FitnessConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown fitness config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class AvalancheScores:
    """Per-distribution values, ordered state 0 (size, duration, area), then state 1."""

    r2: np.ndarray
    d: np.ndarray
    b: np.ndarray
    u: float
    l: np.ndarray = field(default_factory=lambda: np.zeros(6))


@dataclass
class FitnessReport:
    r2_hat: float = 0.0
    d_hat: float = 0.0
    b_hat: float = 0.0
    u: float = 0.0
    l_hat: float | None = None
    s_partial: float = 0.0
    s: float = 0.0
    valid: bool = False
    diagnostic: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _blend(values, best) -> float:
    v = np.asarray(values, dtype=float)
    if v.shape != (6,):
        raise ParameterError(f"score arrays must have 6 entries, got shape {v.shape}")
    return 0.9 * best(v[:3].mean(), v[3:].mean()) + 0.1 * v.mean()


def partial_score(r2_hat: float, d_hat: float, b_hat: float, u: float) -> float:
    return r2_hat**2 + d_hat**2 + b_hat + u


def final_score(s_partial: float, l_hat: float | None, gate: float = 3.0) -> float:
    if l_hat is not None and s_partial > gate:
        return s_partial + l_hat
    return s_partial


def combine_scores(scores: AvalancheScores, cfg: FitnessConfig = FitnessConfig(),
                   with_llr: bool | None = None) -> FitnessReport:
    """Fold the score arrays into a report.

    The log-likelihood term is added only past the gate; ``with_llr=False``
    skips it regardless (``scores.l`` has not been computed).
    """
    r2_hat = _sigmoid(cfg.alpha_r2 * _blend(scores.r2, max))
    d_hat = math.exp(-cfg.alpha_d * _blend(scores.d, min))
    b_hat = math.tanh(cfg.alpha_b * _blend(scores.b, max))
    s_partial = partial_score(r2_hat, d_hat, b_hat, scores.u)
    rep = FitnessReport(r2_hat, d_hat, b_hat, float(scores.u), None, s_partial, s_partial, True)
    if s_partial > cfg.gate and with_llr is not False:
        rep.l_hat = _sigmoid(cfg.alpha_l * _blend(scores.l, max))
        rep.s = final_score(s_partial, rep.l_hat, cfg.gate)
    return rep


def unique_state_fraction(raster: np.ndarray) -> float:
    """Distinct recorded configurations over recorded steps.

    ``raster`` is ``(T, N, C)`` states or ``(T, N)`` channel codes.
    """
    t = raster.shape[0]
    if t < 1:
        raise ParameterError("empty raster")
    rows = np.ascontiguousarray(raster).reshape(t, -1)
    return len({r.tobytes() for r in rows}) / t


def nonzero_bin_fraction(hist) -> float:
    hist = {int(k): int(v) for k, v in dict(hist).items() if v > 0}
    if not hist:
        return 0.0
    top = max(hist)
    return sum(1 for v in hist if 1 <= v <= top) / top


def score_distributions(dists: AvalancheDistributions, cfg: FitnessConfig) -> tuple[AvalancheScores, dict]:
    r2, d, b, alphas = [], [], [], []
    for key in dists.keys():
        hist = dists.histogram(*key)
        samples = dists.samples[key]
        r2.append(cfg.r2_scale * lsq_loglog_fit(hist).r_squared)
        alpha = mle_alpha(samples)
        alphas.append(alpha)
        d.append(ks_statistic(samples, alpha))
        b.append(nonzero_bin_fraction(hist))
    scores = AvalancheScores(np.array(r2), np.array(d), np.array(b), 0.0)
    return scores, {"alpha": alphas}


def llr_array(dists: AvalancheDistributions, cfg: FitnessConfig) -> tuple[np.ndarray, list]:
    """Raw log-likelihood ratios, zeroed where not significant."""
    out, ps = [], []
    for key in dists.keys():
        try:
            ratio, p = loglikelihood_ratio_vs_exponential(dists.samples[key], normalized=False)
        except ParameterError:
            ratio, p = 0.0, 1.0
        ps.append(p)
        out.append(ratio if p < cfg.llr_p_max else 0.0)
    return np.array(out), ps


def simulate_for_fitness(genome: Genome, cfg: FitnessConfig, rng: np.random.Generator,
                         density: float | None = None) -> np.ndarray:
    """``(steps, grid)`` channel codes from the standard random start."""
    initial = init_grid(cfg.grid, genome.arch.channels, cfg.density if density is None else density, (0,), rng)
    return TableRule.from_genome(genome).run_codes(encode_states(initial), cfg.steps)


def evaluate_genome(genome: Genome, cfg: FitnessConfig = FitnessConfig(),
                    rng: np.random.Generator | None = None) -> FitnessReport:
    """Simulate from a random start and score the first channel's avalanches."""
    if rng is None:
        raise ParameterError("evaluate_genome needs a random generator")
    try:
        codes = simulate_for_fitness(genome, cfg, rng)
    except (ParameterError, ArithmeticError) as exc:
        return FitnessReport(diagnostic=f"simulation failed: {exc}")
    matrix = (codes & 1).astype(np.uint8)
    dists = AvalancheDistributions.from_table(avalanche_table(matrix))
    bins = {f"{s}_{m}": count_nonzero_leading_bins(dists.histogram(s, m)) for s, m in dists.keys()}
    if min(bins.values()) < cfg.required_nonzero_bins:
        return FitnessReport(diagnostic="too few nonzero leading bins", details={"leading_bins": bins})
    scores, extra = score_distributions(dists, cfg)
    scores.u = unique_state_fraction(matrix if cfg.unique_channel0_only else codes)
    details = {
        "leading_bins": bins,
        "r2": scores.r2.tolist(),
        "d": scores.d.tolist(),
        "b": scores.b.tolist(),
        "alpha": extra["alpha"],
        "avalanches": {"0": dists.count(0), "1": dists.count(1)},
    }
    rep = combine_scores(scores, cfg, with_llr=False)
    if rep.s_partial > cfg.gate:
        scores.l, ps = llr_array(dists, cfg)
        rep = combine_scores(scores, cfg)
        details.update({"l": scores.l.tolist(), "llr_p": ps})
    rep.details = details
    return rep
