"""CMA-ES over flat genome vectors, maximising criticality fitness.

The optimizer minimises; ``evolve`` passes ``-S``. Sampling for generation
``g`` uses the stream ``(seed, 0, g)`` and individual ``k`` of generation
``g`` is evaluated with the stream ``(seed, 1, g, k)``, so a run is fully
determined by its seed and resumes exactly from a checkpoint.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from critnca.fitness import FitnessConfig, evaluate_genome
from critnca.grid import ParameterError, make_rng
from critnca.nca import Architecture, Genome

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "critnca-cma-checkpoint/1"


@dataclass
class CmaState:
    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    lam: int
    mu: int
    weights: np.ndarray
    generation: int = 0
    # eigendecomposition cache: cov = B diag(D**2) B^T
    B: np.ndarray | None = None
    D: np.ndarray | None = None
    eigen_generation: int = -1

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def mueff(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))

    def rates(self) -> dict:
        n, mueff = self.dim, self.mueff
        c_sigma = (mueff + 2) / (n + mueff + 5)
        c_c = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        c1 = 2 / ((n + 1.3) ** 2 + mueff)
        c_mu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        d_sigma = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + c_sigma
        chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        return dict(c_sigma=c_sigma, c_c=c_c, c1=c1, c_mu=c_mu, d_sigma=d_sigma, chi_n=chi_n)

    def copy(self) -> "CmaState":
        return replace(
            self,
            mean=self.mean.copy(), cov=self.cov.copy(), p_sigma=self.p_sigma.copy(),
            p_c=self.p_c.copy(), weights=self.weights.copy(),
            B=None if self.B is None else self.B.copy(),
            D=None if self.D is None else self.D.copy(),
        )


def cma_init(dim: int, lam: int = 96, sigma0: float = 0.5, mean: np.ndarray | None = None) -> CmaState:
    """Standard CMA-ES state: mu = lam // 2 with log-rank weights."""
    if dim < 1 or lam < 4:
        raise ParameterError(f"need dim >= 1 and lambda >= 4, got dim={dim} lambda={lam}")
    if sigma0 <= 0:
        raise ParameterError("sigma0 must be positive")
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    m = np.zeros(dim) if mean is None else np.array(mean, dtype=float)
    return CmaState(m, float(sigma0), np.eye(dim), np.zeros(dim), np.zeros(dim), lam, mu, w)


def _update_eigen(state: CmaState, force: bool = False) -> None:
    r = state.rates()
    gap = max(1, int(1.0 / ((r["c1"] + r["c_mu"]) * state.dim * 10)))
    if not force and state.B is not None and state.generation - state.eigen_generation < gap:
        return
    cov = np.triu(state.cov) + np.triu(state.cov, 1).T
    for attempt in range(3):
        try:
            evals, vecs = np.linalg.eigh(cov)
            break
        except np.linalg.LinAlgError:
            # re-condition and retry
            cov = cov + np.eye(state.dim) * 1e-10 * max(1.0, float(np.abs(np.diag(cov)).max()))
    else:
        raise ArithmeticError("covariance eigendecomposition failed")
    floor = 1e-14 * max(float(evals.max()), 1e-300)
    if evals.min() < floor:
        evals = np.maximum(evals, floor)
        cov = (vecs * evals) @ vecs.T
    state.cov = cov
    state.B, state.D = vecs, np.sqrt(evals)
    state.eigen_generation = state.generation


def cma_ask(state: CmaState, rng: np.random.Generator) -> np.ndarray:
    """``lam`` candidates, one per row."""
    _update_eigen(state)
    z = rng.standard_normal((state.lam, state.dim))
    y = (z * state.D) @ state.B.T
    return state.mean + state.sigma * y


def rank_order(fitnesses) -> np.ndarray:
    """Indices sorted best (lowest) first; non-finite values rank last, ties by index."""
    f = np.asarray(fitnesses, dtype=float)
    key = np.where(np.isfinite(f), f, np.inf)
    return np.argsort(key, kind="stable")


def cma_tell(state: CmaState, candidates: np.ndarray, fitnesses) -> CmaState:
    """Rank-based update of mean, step size and covariance; returns a new state."""
    x = np.asarray(candidates, dtype=float)
    if x.shape != (state.lam, state.dim) or len(fitnesses) != state.lam:
        raise ParameterError("tell needs exactly lambda candidates and fitnesses")
    new = state.copy()
    _update_eigen(new)
    r = new.rates()
    order = rank_order(fitnesses)[: new.mu]
    y = (x[order] - new.mean) / new.sigma
    y_w = new.weights @ y
    new.mean = new.mean + new.sigma * y_w

    inv_sqrt_y = new.B @ ((new.B.T @ y_w) / new.D)
    cs = r["c_sigma"]
    new.p_sigma = (1 - cs) * new.p_sigma + math.sqrt(cs * (2 - cs) * new.mueff) * inv_sqrt_y
    gen = new.generation + 1
    ps_norm = float(np.linalg.norm(new.p_sigma))
    h_sigma = ps_norm / math.sqrt(1 - (1 - cs) ** (2 * gen)) / r["chi_n"] < 1.4 + 2 / (new.dim + 1)
    cc = r["c_c"]
    new.p_c = (1 - cc) * new.p_c + h_sigma * math.sqrt(cc * (2 - cc) * new.mueff) * y_w

    c1, c_mu = r["c1"], r["c_mu"]
    delta_h = (1 - h_sigma) * cc * (2 - cc)
    rank_mu = (y.T * new.weights) @ y
    new.cov = ((1 - c1 - c_mu) * new.cov + c1 * (np.outer(new.p_c, new.p_c) + delta_h * new.cov)
               + c_mu * rank_mu)
    new.sigma = new.sigma * math.exp((cs / r["d_sigma"]) * (ps_norm / r["chi_n"] - 1))
    new.generation = gen
    return new


def fmin(func, x0, sigma0: float, lam: int, max_evals: int, seed: int = 0, ftarget: float = -np.inf):
    """Minimise ``func`` from ``x0``; returns ``(best_x, best_f, evaluations)``."""
    state = cma_init(len(x0), lam, sigma0, x0)
    best_x, best_f, evals = np.array(x0, dtype=float), np.inf, 0
    while evals + lam <= max_evals and best_f > ftarget:
        xs = cma_ask(state, make_rng(seed, 0, state.generation))
        fs = np.array([func(xi) for xi in xs])
        evals += lam
        i = int(np.argmin(fs))
        if fs[i] < best_f:
            best_f, best_x = float(fs[i]), xs[i].copy()
        state = cma_tell(state, xs, fs)
    return best_x, best_f, evals


@dataclass
class EvolutionConfig:
    seed: int = 0
    generations: int = 110
    lam: int = 96
    sigma0: float = 0.5
    workers: int = 1
    fitness: FitnessConfig = field(default_factory=FitnessConfig)
    arch: Architecture = field(default_factory=Architecture)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GenerationRecord:
    generation: int
    best: float
    mean: float
    sigma: float
    best_so_far: float
    valid: int


@dataclass
class EvolutionLog:
    records: list[GenerationRecord] = field(default_factory=list)
    best_genomes: list[list[float]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "best_s", "mean_s", "sigma", "best_so_far", "valid"])
        for r in self.records:
            w.writerow([r.generation, repr(r.best), repr(r.mean), repr(r.sigma), repr(r.best_so_far), r.valid])
        return buf.getvalue()


def _evaluate(args) -> float:
    params, arch, fcfg, seed, gen, idx = args
    rep = evaluate_genome(Genome(params, arch), fcfg, make_rng(seed, 1, gen, idx))
    return rep.s


def evaluate_population(xs: np.ndarray, cfg: EvolutionConfig, gen: int, pool=None) -> np.ndarray:
    jobs = [(x, cfg.arch, cfg.fitness, cfg.seed, gen, k) for k, x in enumerate(xs)]
    if pool is None:
        return np.array([_evaluate(j) for j in jobs])
    # map keeps submission order, so the outcome is independent of scheduling
    return np.array(list(pool.map(_evaluate, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers)))))


def save_checkpoint(path: str | Path, state: CmaState, log_: EvolutionLog, cfg: EvolutionConfig,
                    best: tuple[float, np.ndarray]) -> None:
    meta = {
        "format_version": CHECKPOINT_FORMAT,
        # worker count does not affect results, so it is left out
        "config": {k: v for k, v in cfg.to_dict().items() if k != "workers"},
        "records": [asdict(r) for r in log_.records],
        "sigma": state.sigma, "lam": state.lam, "mu": state.mu,
        "generation": state.generation, "best_s": best[0],
        "eigen_generation": state.eigen_generation,
    }
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), mean=state.mean, cov=state.cov,
                 p_sigma=state.p_sigma, p_c=state.p_c, weights=state.weights, best_x=best[1],
                 B=state.B if state.B is not None else np.zeros(0),
                 D=state.D if state.D is not None else np.zeros(0),
                 best_genomes=np.array(log_.best_genomes))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[CmaState, EvolutionLog, dict, tuple[float, np.ndarray]]:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT:
            raise ParameterError(f"unsupported checkpoint format {meta.get('format_version')!r}")
        state = CmaState(data["mean"], meta["sigma"], data["cov"], data["p_sigma"], data["p_c"],
                         meta["lam"], meta["mu"], data["weights"], meta["generation"])
        if data["D"].size:
            state.B, state.D = data["B"], data["D"]
            state.eigen_generation = meta["eigen_generation"]
        log_ = EvolutionLog([GenerationRecord(**r) for r in meta["records"]],
                            [list(g) for g in data["best_genomes"]])
        best = (meta["best_s"], data["best_x"])
    return state, log_, meta, best


def evolve(cfg: EvolutionConfig, checkpoint: str | Path | None = None, on_generation=None):
    """Run CMA-ES on ``-S``; returns ``(best genome, best S, log)``.

    With ``checkpoint`` set, progress is saved after every generation and an
    existing checkpoint is resumed.
    """
    dim = cfg.arch.parameter_count
    if checkpoint is not None and Path(checkpoint).exists():
        state, log_, meta, (best_s, best_x) = load_checkpoint(checkpoint)
        if meta["config"]["seed"] != cfg.seed or state.dim != dim:
            raise ParameterError("checkpoint does not match this run's seed/architecture")
        log.info("resuming from generation %d", state.generation)
    else:
        state = cma_init(dim, cfg.lam, cfg.sigma0)
        log_, best_s, best_x = EvolutionLog(), -np.inf, state.mean.copy()
    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        while state.generation < cfg.generations:
            gen = state.generation
            xs = cma_ask(state, make_rng(cfg.seed, 0, gen))
            s = evaluate_population(xs, cfg, gen, pool)
            i = int(np.argmax(s))
            if s[i] > best_s:
                best_s, best_x = float(s[i]), xs[i].copy()
            log_.records.append(GenerationRecord(gen, float(s[i]), float(s.mean()), state.sigma,
                                                 best_s, int(np.sum(s > 0))))
            log_.best_genomes.append(xs[i].tolist())
            state = cma_tell(state, xs, -s)
            log.info("gen %d best %.4f mean %.4f valid %d sigma %.4f", gen, s[i], s.mean(),
                     int(np.sum(s > 0)), state.sigma)
            if checkpoint is not None:
                save_checkpoint(checkpoint, state, log_, cfg, (best_s, best_x))
            if on_generation is not None:
                on_generation(state, log_)
    finally:
        if pool is not None:
            pool.shutdown()
    return Genome(best_x, cfg.arch), best_s, log_
