"""``critnca`` command line: evolve, analyze, bench, robustness, export-lut.

Exit codes: 0 success, 1 domain or I/O error, 2 usage error. Every output
file is written under ``--out``, which must already exist. Outputs depend
only on the configuration and seed, never on the worker count.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from critnca.avalanche import AvalancheDistributions, avalanche_table
from critnca.evolution import EvolutionConfig, evolve
from critnca.fitness import FitnessConfig, evaluate_genome, simulate_for_fitness
from critnca.grid import ParameterError, export_raster_bitmap, make_rng
from critnca.idx import DatasetError, load_mnist
from critnca.nca import Architecture, Genome, export_lookup_table, load_shipped_genome
from critnca.powerlaw import fit_distribution
from critnca.readout import ConvergenceWarning
from critnca.reservoir import FiveBitTask, as_substrate, run_5bit_benchmark, run_mnist_benchmark, run_robustness

WORKERS_ENV = "CRITNCA_WORKERS"
log = logging.getLogger("critnca")


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    """Settings shared by all commands; a JSON file may set any of them."""

    seed: int = 0
    workers: int | None = None
    generations: int = 110
    lam: int = 96
    sigma0: float = 0.5
    fitness: dict = dataclasses.field(default_factory=dict)
    genome: str | None = None
    dataset: str | None = None
    substrate: str = "nca"
    runs: int | None = None
    train_size: int | None = None
    include_initial: bool = False
    features: str = "all"
    readout: dict = dataclasses.field(default_factory=dict)
    bootstrap_iterations: int = 1000
    bootstrap_samples: int = 10_000
    densities: list = dataclasses.field(default_factory=lambda: [0.0, 0.01, 0.99, 1.0])
    width: int = 1000
    steps: int = 1000

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        return cls(**data)

    def fitness_config(self) -> FitnessConfig:
        try:
            return FitnessConfig.from_dict(self.fitness)
        except (ParameterError, TypeError) as exc:
            raise UsageError(str(exc)) from exc

    def worker_count(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        env = os.environ.get(WORKERS_ENV)
        if env is None:
            return 1
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _load_genome(cfg: RunConfig) -> Genome:
    if cfg.genome in (None, "shipped"):
        return load_shipped_genome()
    return Genome.load(cfg.genome)


# ---------------------------------------------------------------- commands

def cmd_evolve(cfg: RunConfig, out: Path, checkpoint: bool = True) -> dict:
    ecfg = EvolutionConfig(seed=cfg.seed, generations=cfg.generations, lam=cfg.lam, sigma0=cfg.sigma0,
                           workers=cfg.worker_count(), fitness=cfg.fitness_config(), arch=Architecture())
    ckpt = out / "checkpoint.npz" if checkpoint else None
    genome, best_s, elog = evolve(ecfg, checkpoint=ckpt)
    genome.save(out / "best_genome.json")
    _write(out, "evolution_log.csv", elog.to_csv())
    summary = {"seed": cfg.seed, "generations": cfg.generations, "lambda": cfg.lam, "sigma0": cfg.sigma0,
               "best_s": best_s}
    _write(out, "evolution.json", _dump(summary))
    return summary


def cmd_analyze(cfg: RunConfig, out: Path, raster: bool = False) -> dict:
    genome = _load_genome(cfg)
    fcfg = cfg.fitness_config()
    report = evaluate_genome(genome, fcfg, make_rng(cfg.seed))
    # same stream as evaluate_genome, so the distributions are the scored ones
    codes = simulate_for_fitness(genome, fcfg, make_rng(cfg.seed))
    matrix = (codes & 1).astype(np.uint8)
    dists = AvalancheDistributions.from_table(avalanche_table(matrix))
    dists.to_csv(out / "avalanches.csv")
    fits = {}
    for k, (state, metric) in enumerate(dists.keys()):
        rows = ["value,count"] + [f"{v},{c}" for v, c in sorted(dists.histogram(state, metric).items())]
        _write(out, f"avalanche_state{state}_{metric}.csv", "\n".join(rows) + "\n")
        try:
            fit = fit_distribution(dists.samples[(state, metric)], seed=(cfg.seed, 2, k),
                                   n_iter=cfg.bootstrap_iterations, n_synth=cfg.bootstrap_samples,
                                   workers=cfg.worker_count())
            fits[f"state{state}_{metric}"] = json.loads(fit.to_json())
        except ParameterError as exc:
            fits[f"state{state}_{metric}"] = {"error": str(exc)}
    result = {"seed": cfg.seed, "fitness": report.to_dict(), "distributions": fits}
    _write(out, "analysis.json", _dump(result))
    if raster:
        export_raster_bitmap(matrix, out / "raster.pbm")
    return result


def cmd_bench(cfg: RunConfig, task: str, out: Path) -> dict:
    substrate = _load_genome(cfg) if cfg.substrate == "nca" else cfg.substrate
    try:
        substrate = as_substrate(substrate)
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc
    if task == "5bit":
        if substrate is None:
            raise UsageError("the 5-bit task needs a substrate")
        runs = 100 if cfg.runs is None else cfg.runs
        result = run_5bit_benchmark(substrate, runs, cfg.seed, FiveBitTask(features=cfg.features), cfg.readout)
    else:
        if cfg.dataset is None:
            raise UsageError("mnist needs --dataset DIR")
        data = load_mnist(cfg.dataset)
        runs = 10 if cfg.runs is None else cfg.runs
        result = run_mnist_benchmark(substrate, data, runs, cfg.seed, cfg.train_size,
                                     include_initial=cfg.include_initial, readout=cfg.readout,
                                     progress=lambda r, a: log.info("run %d accuracy %.4f", r, a))
    result["substrate"] = cfg.substrate
    result["seed"] = cfg.seed
    _write(out, f"bench_{task}.json", _dump(result))
    return result


def cmd_robustness(cfg: RunConfig, out: Path) -> dict:
    genome = _load_genome(cfg)
    runs = run_robustness(genome, cfg.densities, cfg.width, cfg.steps, cfg.seed)
    verdicts = []
    for r in runs:
        name = f"robustness_density_{r['density']:g}.pbm"
        export_raster_bitmap(r["matrix"], out / name)
        verdicts.append({k: v for k, v in r.items() if k != "matrix"} | {"bitmap": name})
    result = {"seed": cfg.seed, "width": cfg.width, "steps": cfg.steps, "runs": verdicts}
    _write(out, "robustness.json", _dump(result))
    return result


def cmd_export_lut(cfg: RunConfig, out: Path) -> dict:
    table = export_lookup_table(_load_genome(cfg))
    channels = table.shape[1]
    header = "pattern," + ",".join(f"out{c}" for c in range(channels))
    lines = [header] + [f"{p}," + ",".join(map(str, row)) for p, row in enumerate(table.tolist())]
    _write(out, "lookup_table.csv", "\n".join(lines) + "\n")
    return {"entries": int(table.shape[0]), "channels": channels}


# ---------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="critnca", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, genome=True):
        sp.add_argument("--config", help="JSON file with RunConfig keys")
        sp.add_argument("--out", required=True, help="existing output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, help=f"parallel workers (default ${WORKERS_ENV} or 1)")
        if genome:
            sp.add_argument("--genome", help="genome JSON file (default: the shipped genome)")

    sp = sub.add_parser("evolve", help="run CMA-ES toward criticality")
    common(sp, genome=False)
    sp.add_argument("--generations", type=int)
    sp.add_argument("--lambda", dest="lam", type=int)
    sp.add_argument("--sigma0", type=float)
    sp.add_argument("--grid", type=int, help="fitness grid width")
    sp.add_argument("--steps", type=int, help="fitness simulation steps")
    sp.add_argument("--no-checkpoint", action="store_true")

    sp = sub.add_parser("analyze", help="fitness report and power-law fits of a genome")
    common(sp)
    sp.add_argument("--bootstrap", dest="bootstrap_iterations", type=int)
    sp.add_argument("--raster", action="store_true", help="also write the channel-0 raster bitmap")

    sp = sub.add_parser("bench", help="reservoir benchmarks")
    sp.add_argument("task", choices=["5bit", "mnist"])
    common(sp)
    sp.add_argument("--substrate", help="nca, none, or eca:<rule>")
    sp.add_argument("--dataset", help="directory with the MNIST IDX files")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--train-size", type=int)
    sp.add_argument("--include-initial", action="store_true", default=None)
    sp.add_argument("--features", choices=["all", "last"])

    sp = sub.add_parser("robustness", help="extreme initial densities")
    common(sp)
    sp.add_argument("--densities", type=float, nargs="+")

    sp = sub.add_parser("export-lut", help="write the genome's lookup table")
    common(sp)
    return p


_CONFIG_FLAGS = ("seed", "workers", "generations", "lam", "sigma0", "genome", "dataset", "substrate", "runs",
                 "train_size", "include_initial", "features", "bootstrap_iterations", "densities")


def make_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    cfg = RunConfig.from_dict(data)
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    for name in ("grid", "steps"):
        value = getattr(args, name, None)
        if value is not None and args.command == "evolve":
            cfg.fitness = {**cfg.fitness, name: value}
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    warnings.simplefilter("always", ConvergenceWarning)
    try:
        cfg = make_config(args)
        out = Path(args.out)
        if not out.is_dir():
            raise FileNotFoundError(f"output directory {out} does not exist")
        if args.command == "evolve":
            result = cmd_evolve(cfg, out, checkpoint=not args.no_checkpoint)
        elif args.command == "analyze":
            result = cmd_analyze(cfg, out, raster=args.raster)
        elif args.command == "bench":
            result = cmd_bench(cfg, args.task, out)
        elif args.command == "robustness":
            result = cmd_robustness(cfg, out)
        else:
            result = cmd_export_lut(cfg, out)
    except UsageError as exc:
        print(f"critnca: usage error: {exc}", file=sys.stderr)
        return 2
    except (ParameterError, DatasetError, ArithmeticError, OSError) as exc:
        print(f"critnca: error: {exc}", file=sys.stderr)
        return 1
    print(_summary(args.command, result))
    return 0


def _summary(command: str, result: dict) -> str:
    if command == "evolve":
        return f"best S = {result['best_s']:.4f}"
    if command == "analyze":
        f = result["fitness"]
        ps = {k: v.get("gof_p") for k, v in result["distributions"].items()}
        return f"S = {f['s']:.4f} (valid={f['valid']}); gof p-values: {ps}"
    if command == "bench":
        if result["task"] == "5bit":
            return f"5-bit: {result['successes']}/{result['runs']} runs with perfect recall"
        return f"mnist: max accuracy {result['max']:.4f}, mean {result['mean']:.4f} over {result['runs']} runs"
    if command == "robustness":
        return "; ".join(f"density {r['density']:g}: recovered={r['recovered']}" for r in result["runs"])
    return f"lookup table with {result['entries']} entries"


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
