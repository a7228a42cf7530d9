import json

import numpy as np
import pytest

from critnca.cli import RunConfig, UsageError, run
from critnca.fitness import FitnessConfig, evaluate_genome
from critnca.grid import make_rng, read_bitmap
from critnca.nca import Genome, export_lookup_table
from critnca.reservoir import run_robustness

SMALL = {"fitness": {"grid": 150, "steps": 150}, "width": 150, "steps": 150, "bootstrap_iterations": 15,
         "bootstrap_samples": 2000}


@pytest.fixture
def genome_file(tmp_path):
    path = tmp_path / "g.json"
    Genome.random(make_rng(62, 7), scale=0.5).save(path)
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def outdir(tmp_path, name):
    d = tmp_path / name
    d.mkdir()
    return d


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_evolve_smoke_and_determinism(tmp_path, monkeypatch):
    args = ["evolve", "--seed", "2", "--generations", "3", "--lambda", "6", "--grid", "120", "--steps", "120"]
    a, b = outdir(tmp_path, "a"), outdir(tmp_path, "b")
    assert run(args + ["--out", str(a), "--workers", "1"]) == 0
    monkeypatch.setenv("CRITNCA_WORKERS", "2")
    assert run(args + ["--out", str(b)]) == 0
    assert read_all(a) == read_all(b)
    rows = (a / "evolution_log.csv").read_text().splitlines()
    best = [float(r.split(",")[4]) for r in rows[1:]]
    assert len(best) == 3 and best == sorted(best)
    Genome.load(a / "best_genome.json")


def test_missing_output_dir_is_error(tmp_path):
    assert run(["evolve", "--out", str(tmp_path / "nope"), "--generations", "1"]) == 1


def test_usage_errors(tmp_path, genome_file):
    out = outdir(tmp_path, "o")
    assert run(["bench", "5bit", "--substrate", "rule999", "--genome", str(genome_file), "--out", str(out)]) == 2
    assert run(["bench", "sorting", "--out", str(out)]) == 2
    assert run(["frobnicate"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sede": 1}))
    assert run(["export-lut", "--config", str(bad), "--out", str(out)]) == 2
    with pytest.raises(UsageError):
        RunConfig.from_dict({"nope": 1})


def test_corrupt_genome_is_domain_error(tmp_path):
    g = tmp_path / "g.json"
    g.write_text("{broken")
    assert run(["analyze", "--genome", str(g), "--out", str(outdir(tmp_path, "o"))]) == 1


def test_analyze_reports_and_determinism(tmp_path, genome_file, config_file):
    a, b = outdir(tmp_path, "a"), outdir(tmp_path, "b")
    base = ["analyze", "--genome", str(genome_file), "--config", str(config_file), "--seed", "4"]
    assert run(base + ["--out", str(a), "--workers", "1", "--raster"]) == 0
    assert run(base + ["--out", str(b), "--workers", "3", "--raster"]) == 0
    assert read_all(a) == read_all(b)
    res = json.loads((a / "analysis.json").read_text())
    expected = evaluate_genome(Genome.load(genome_file), FitnessConfig(grid=150, steps=150), make_rng(4))
    assert res["fitness"] == json.loads(expected.to_json())
    names = {p.name for p in a.iterdir()}
    for s in (0, 1):
        for m in ("size", "duration", "area"):
            assert f"avalanche_state{s}_{m}.csv" in names
            fit = res["distributions"][f"state{s}_{m}"]
            assert "error" in fit or set(fit) >= {"alpha_hat", "D", "gof_p", "llr", "llr_p", "n_samples"}
    assert read_bitmap(a / "raster.pbm").shape == (150, 150)


def test_robustness_outputs(tmp_path, genome_file, config_file):
    out = outdir(tmp_path, "o")
    args = ["robustness", "--genome", str(genome_file), "--config", str(config_file), "--out", str(out)]
    assert run(args) == 0
    res = json.loads((out / "robustness.json").read_text())
    direct = run_robustness(Genome.load(genome_file), width=150, steps=150)
    assert [r["recovered"] for r in res["runs"]] == [r["recovered"] for r in direct]
    assert len(list(out.glob("*.pbm"))) == 4
    for r, d in zip(res["runs"], direct):
        assert np.array_equal(read_bitmap(out / r["bitmap"]), d["matrix"])
    out2 = outdir(tmp_path, "o2")
    assert run(args[:-1] + [str(out2), "--densities", "0.3", "0.7"]) == 0
    assert [r["density"] for r in json.loads((out2 / "robustness.json").read_text())["runs"]] == [0.3, 0.7]


def test_export_lut(tmp_path, genome_file):
    out = outdir(tmp_path, "o")
    assert run(["export-lut", "--genome", str(genome_file), "--out", str(out)]) == 0
    lines = (out / "lookup_table.csv").read_text().splitlines()
    assert lines[0] == "pattern,out0,out1,out2,out3,out4" and len(lines) == 32_769
    table = export_lookup_table(Genome.load(genome_file))
    assert lines[1234] == "1233," + ",".join(map(str, table[1233]))


def test_bench_5bit_small(tmp_path, genome_file, capsys):
    out = outdir(tmp_path, "o")
    args = ["bench", "5bit", "--genome", str(genome_file), "--runs", "1", "--out", str(out)]
    assert run(args) == 0
    assert "5-bit:" in capsys.readouterr().out
    res = json.loads((out / "bench_5bit.json").read_text())
    assert res["runs"] == 1 and len(res["per_run_success"]) == 1


def test_bench_mnist_needs_dataset(tmp_path):
    out = outdir(tmp_path, "o")
    assert run(["bench", "mnist", "--substrate", "none", "--out", str(out)]) == 2
    assert run(["bench", "mnist", "--substrate", "none", "--dataset", str(tmp_path), "--out", str(out)]) == 1
