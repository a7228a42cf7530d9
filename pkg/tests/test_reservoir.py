import numpy as np
import pytest

from critnca.grid import ParameterError, make_rng
from critnca.nca import Genome, TableRule, simulate, step
from critnca.readout import train_readout
from critnca.reservoir import (
    ElementaryRule,
    FiveBitTask,
    as_substrate,
    binarize,
    five_bit_dataset,
    five_bit_signals,
    inject_bits,
    mnist_features,
    pattern_bits,
    random_mapping,
    recovered,
    run_5bit_benchmark,
    run_5bit_sequence,
    run_batch,
    run_mnist_benchmark,
    run_robustness,
)

# rows of the worked example for 22 = 10110b: step -> (inputs, outputs)
EXAMPLE_22 = {
    1: ((1, 0, 0, 0), (0, 0, 1)),
    2: ((0, 1, 0, 0), (0, 0, 1)),
    3: ((1, 0, 0, 0), (0, 0, 1)),
    4: ((1, 0, 0, 0), (0, 0, 1)),
    5: ((0, 1, 0, 0), (0, 0, 1)),
    6: ((0, 0, 1, 0), (0, 0, 1)),
    100: ((0, 0, 1, 0), (0, 0, 1)),
    204: ((0, 0, 1, 0), (0, 0, 1)),
    205: ((0, 0, 0, 1), (0, 0, 1)),
    206: ((0, 0, 1, 0), (1, 0, 0)),
    207: ((0, 0, 1, 0), (0, 1, 0)),
    208: ((0, 0, 1, 0), (1, 0, 0)),
    209: ((0, 0, 1, 0), (1, 0, 0)),
    210: ((0, 0, 1, 0), (0, 1, 0)),
}


def test_signals_for_22():
    assert pattern_bits(22) == [1, 0, 1, 1, 0]
    inputs, targets = five_bit_signals(22)
    assert inputs.shape == (210, 4) and targets.shape == (210, 3)
    for t, (i, o) in EXAMPLE_22.items():
        assert tuple(inputs[t - 1]) == i and tuple(targets[t - 1]) == o
    assert np.all(inputs[5:204] == (0, 0, 1, 0))


def test_targets_have_five_recall_steps():
    task = FiveBitTask()
    assert task.width == 80 and task.total_steps == 210 and task.total_steps * task.substeps == 630
    for p in range(32):
        _, targets = five_bit_signals(p)
        assert targets.sum(axis=1).tolist() == [1] * 210
        assert int((targets[:, 2] == 0).sum()) == 5
        assert targets[205:, 0].tolist() == pattern_bits(p)


def test_mapping_regions():
    for s in range(20):
        m = random_mapping(make_rng(s))
        assert m.shape == (4, 4)
        for r in range(4):
            assert len(set(m[r])) == 4 and np.all((m[r] >= 20 * r) & (m[r] < 20 * (r + 1)))


def test_inject_bits():
    rng = make_rng(1)
    state = rng.integers(0, 2, (80, 5)).astype(np.uint8)
    m = random_mapping(rng)
    assert np.array_equal(inject_bits(state, [0, 0, 0, 0], m), state)
    for _ in range(20):
        bits = rng.integers(0, 2, 4)
        once = inject_bits(state, bits, m)
        assert np.array_equal(inject_bits(once, bits, m), state)
        expected = state.copy()
        for r in range(4):
            for j in range(4):
                expected[m[r, j], 0] = state[m[r, j], 0] ^ bits[j]
        assert np.array_equal(once, expected)
        assert np.array_equal(once[:, 1:], state[:, 1:])
    with pytest.raises(ParameterError):
        inject_bits(state, [1, 0, 0, 0], np.array([[80, 1, 2, 3]]))


def test_5bit_sequence_matches_stepwise_oracle():
    g = Genome.random(make_rng(2))
    m = random_mapping(make_rng(3))
    inputs, _ = five_bit_signals(13)
    feats = run_5bit_sequence(g, 13, m)
    assert feats.shape == (210, 1200)
    state = np.zeros((80, 5), np.uint8)
    for t in range(210):
        state = inject_bits(state, inputs[t], m)
        rows = []
        for _ in range(3):
            state = step(state, g)
            rows.append(state.ravel())
        assert np.array_equal(feats[t], np.concatenate(rows))
    last = run_5bit_sequence(g, 13, m, FiveBitTask(features="last"))
    assert last.shape == (210, 400) and np.array_equal(last, feats[:, 800:])


def test_zero_genome_features_are_constant_and_fail():
    feats = run_5bit_sequence(Genome.zeros(), 22, random_mapping(make_rng(0)))
    assert not feats.any()
    res = run_5bit_benchmark(Genome.zeros(), runs=2)
    assert res["successes"] == 0 and res["per_run_success"] == [False, False]


def test_5bit_dataset_labels():
    x, y = five_bit_dataset("eca:90", random_mapping(make_rng(0)), FiveBitTask())
    assert x.shape == (32 * 210, 240) and y.shape == (32 * 210,)
    assert np.bincount(y).tolist() == [80, 80, 32 * 205]


def test_elementary_rules():
    rng = make_rng(4)
    row = rng.integers(0, 2, 30)
    for rule in (30, 90, 110, 184):
        r = ElementaryRule(rule)
        out = run_batch(r, row[None, :], 2)[0, 1]
        for i in range(30):
            idx = row[i - 1] << 2 | row[i] << 1 | row[(i + 1) % 30]
            assert out[i] == (rule >> idx) & 1
    out = run_batch(ElementaryRule(30), row[None, :], 2)[0, 1]
    assert np.array_equal(out, np.roll(row, 1) ^ (row | np.roll(row, -1)))
    with pytest.raises(ParameterError):
        ElementaryRule(256)
    with pytest.raises(ParameterError):
        as_substrate("bogus")
    assert as_substrate("none") is None and as_substrate("rule30").rule == 30


def fake_images(n, seed):
    return make_rng(seed).integers(0, 256, (n, 28, 28)).astype(np.uint8)


def test_binarize_threshold():
    img = np.array([[[0, 127, 128, 255]]], np.uint8)
    assert binarize(img).tolist() == [[0, 0, 1, 1]]


def test_mnist_feature_dimensions_and_oracle():
    imgs = fake_images(6, 5)
    g = Genome.random(make_rng(6))
    f = mnist_features(g, imgs)
    assert f.shape == (6, 15_680)
    assert mnist_features("eca:30", imgs).shape == (6, 3_136)
    assert np.array_equal(mnist_features("none", imgs), binarize(imgs))
    for k in range(6):
        s0 = np.zeros((784, 5), np.uint8)
        s0[:, 0] = binarize(imgs[k : k + 1])[0]
        raster = simulate(s0, g, 5)
        assert np.array_equal(f[k], raster[1:].ravel())
        assert np.array_equal(mnist_features(g, imgs[k : k + 1], include_initial=True)[0],
                              raster[:4].ravel())
    # batching does not change the result
    assert np.array_equal(mnist_features(g, imgs, batch=4), f)


def test_mnist_benchmark_pipeline_consistency():
    imgs, labels = fake_images(60, 7), make_rng(8).integers(0, 3, 60)
    test_imgs, test_labels = fake_images(20, 9), make_rng(10).integers(0, 3, 20)
    data = {"train": (imgs, labels), "test": (test_imgs, test_labels)}
    res = run_mnist_benchmark("none", data, runs=2, seed=4)
    direct = [train_readout(binarize(imgs), labels, seed=4 + r).score(binarize(test_imgs), test_labels)
              for r in range(2)]
    assert res["per_run_accuracy"] == direct and res["n_features"] == 784
    assert run_mnist_benchmark("none", data, runs=2, seed=4) == res


def test_robustness_zero_genome():
    for r in run_robustness(Genome.zeros(), width=200, steps=200):
        assert not r["recovered"] and r["final_uniform"]
        assert r["matrix"].shape == (200, 200)


def test_recovered_rule():
    m = np.zeros((200, 10), np.uint8)
    assert not recovered(m)
    m[100:, :5] = 1
    assert recovered(m)
    m[:] = 1
    m[190:, 0] = 0
    assert not recovered(m)
