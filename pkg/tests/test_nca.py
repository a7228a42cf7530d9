import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critnca.grid import ParameterError, init_grid, make_rng
from critnca.nca import (
    Architecture,
    Genome,
    NumericError,
    TableRule,
    export_lookup_table,
    parameter_count,
    simulate,
    step,
)


def reference_step(state, genome):
    """Per-cell evaluation with plain Python floats."""
    w1, b1, w2, b2, w3, b3 = (a.tolist() for a in genome.layers())
    n, c = state.shape
    out = np.zeros_like(state)
    for i in range(n):
        x = []
        for ch in range(c):
            for o in (-1, 0, 1):
                x.append(int(state[(i + o) % n, ch]))
        h1 = [max(0.0, b1[k] + sum(w1[k][j] * x[j] for j in range(len(x)))) for k in range(len(b1))]
        h2 = [max(0.0, b2[h] + sum(w2[h][k] * h1[k] for k in range(len(h1)))) for h in range(len(b2))]
        for ch in range(c):
            out[i, ch] = 1 if b3[ch] + sum(w3[ch][h] * h2[h] for h in range(len(h2))) > 0 else 0
    return out


def test_parameter_count():
    assert parameter_count(Architecture(5, 3, 30, 30)) == 30 * 15 + 30 + 30 * 30 + 30 + 5 * 30 + 5 == 1565
    assert Architecture(1, 3, 1, 1).parameter_count == 8


def test_wrong_length_and_nonfinite_genomes_fail():
    with pytest.raises(ParameterError):
        Genome(np.zeros(1564))
    bad = np.zeros(1565)
    bad[3] = np.nan
    with pytest.raises(NumericError):
        Genome(bad)


def test_zero_genome_quiesces():
    state = init_grid(16, 5, 0.5, {0, 1, 2}, make_rng(0))
    assert not step(state, Genome.zeros()).any()


def identity_genome():
    # kernel picks the centre cell; every later layer passes it through,
    # the output bias puts the threshold between 0 and 1
    arch = Architecture(channels=1, kernels=1, hidden=1)
    params = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, -0.5]
    return Genome(np.array(params), arch)


def test_identity_genome_is_fixed_point():
    g = identity_genome()
    state = make_rng(5).integers(0, 2, (12, 1)).astype(np.uint8)
    assert np.array_equal(step(state, g), state)
    assert np.array_equal(simulate(state, g, 20)[-1], state)


def test_step_matches_reference():
    rng = make_rng(11)
    for _ in range(5):
        g = Genome.random(rng)
        state = rng.integers(0, 2, (8, 5)).astype(np.uint8)
        assert np.array_equal(step(state, g), reference_step(state, g))


def test_simulate_rows():
    g = Genome.random(make_rng(2))
    s0 = init_grid(30, 5, 0.5, {0}, make_rng(3))
    r1 = simulate(s0, g, 1)
    assert r1.shape == (1, 30, 5) and np.array_equal(r1[0], s0)
    z = simulate(s0, Genome.zeros(), 10)
    assert not z[1:].any()
    long, short = simulate(s0, g, 100), simulate(s0, g, 50)
    assert np.array_equal(long[:50], short)
    for t in range(1, 10):
        assert np.array_equal(long[t], step(long[t - 1], g))
    assert np.array_equal(simulate(s0, g, 100, record=False), long[-1])
    with pytest.raises(ParameterError):
        simulate(s0, g, 0)


def test_table_and_network_simulations_agree():
    rng = make_rng(8)
    g = Genome.random(rng)
    s0 = init_grid(64, 5, 0.5, {0, 2}, rng)
    assert np.array_equal(simulate(s0, g, 60, method="table"), simulate(s0, g, 60, method="network"))


def test_lookup_table_size_and_zero_genome():
    table = export_lookup_table(Genome.random(make_rng(0)))
    assert table.shape == (2**15, 5) == (32_768, 5)
    assert not export_lookup_table(Genome.zeros()).any()


def test_lookup_table_entries_and_cross_simulation():
    arch = Architecture(channels=2)
    g = Genome.random(make_rng(4), arch)
    table = export_lookup_table(g)
    assert table.shape == (64, 2)
    # entry p is step applied to the 3-cell pattern encoded by p
    for p in range(64):
        state = np.zeros((3, 2), np.uint8)
        for c in range(2):
            for o in range(3):
                state[o, c] = (p >> (3 * c + o)) & 1
        assert np.array_equal(table[p], step(state, g)[1])
    s0 = make_rng(9).integers(0, 2, (16, 2)).astype(np.uint8)
    via_table = TableRule(table).simulate(s0, 50)
    assert np.array_equal(via_table, simulate(s0, g, 50, method="network"))


def test_lookup_table_size_guard():
    g = Genome.zeros(Architecture(channels=9, kernels=2, hidden=2))
    with pytest.raises(ParameterError):
        export_lookup_table(g)


def test_genome_file_roundtrip(tmp_path):
    g = Genome.random(make_rng(1), scale=math.pi)
    path = tmp_path / "g.json"
    g.save(path)
    back = Genome.load(path)
    assert back.arch == g.arch and np.array_equal(back.params, g.params)
    assert back.params.tobytes() == g.params.tobytes()


def test_corrupt_genome_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ParameterError):
        Genome.load(path)
    path.write_text('{"format_version": "other/9", "arch": {}, "params": []}')
    with pytest.raises(ParameterError):
        Genome.load(path)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), shift=st.integers(0, 19))
def test_shift_equivariance(seed, shift):
    rng = make_rng(seed)
    g = Genome.random(rng)
    state = rng.integers(0, 2, (20, 5)).astype(np.uint8)
    rolled = np.roll(state, shift, axis=0)
    out = step(state, g)
    assert set(np.unique(out)) <= {0, 1}
    assert np.array_equal(step(rolled, g), np.roll(out, shift, axis=0))


def test_shipped_genome_loads(shipped_genome):
    from critnca.nca import load_shipped_genome

    g = load_shipped_genome()
    assert g.arch == Architecture() and np.array_equal(g.params, shipped_genome.params)
