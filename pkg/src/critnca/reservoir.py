"""Reservoir-computing benchmarks on a cellular-automaton substrate.

Two tasks:

* 5-bit memory: an 80-cell grid in four regions of 20 cells receives four
  input lines (bit, negated bit, distractor, cue) by XOR into channel 0 at
  random per-region locations. Each reservoir step is three CA steps; the
  readout must output (bit, negated bit, wait) at every step.
* MNIST: channel 0 of a 784-cell grid holds the binarised image; the states
  of four CA steps form the readout features.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numba
import numpy as np

from critnca.grid import ParameterError, init_grid, make_rng
from critnca.nca import Genome, TableRule, decode_states, encode_states
from critnca.readout import train_readout

# ---------------------------------------------------------------- substrates


class ElementaryRule:
    """Wolfram elementary CA as a one-channel table rule."""

    channels = 1

    def __init__(self, rule: int):
        if not 0 <= rule <= 255:
            raise ParameterError(f"elementary rule must be in 0..255, got {rule}")
        self.rule = rule
        q = np.arange(8)
        left, centre, right = q & 1, (q >> 1) & 1, (q >> 2) & 1
        self.codes = ((rule >> (left << 2 | centre << 1 | right)) & 1).astype(np.int32)


@numba.njit(cache=True)
def _run_batch(codes0, ctable, channels, steps):
    b, n = codes0.shape
    out = np.empty((b, steps, n), dtype=np.int32)
    s1 = channels
    s2 = 2 * channels
    for k in range(b):
        out[k, 0] = codes0[k]
        for t in range(1, steps):
            for i in range(n):
                left = out[k, t - 1, i - 1] if i > 0 else out[k, t - 1, n - 1]
                right = out[k, t - 1, i + 1] if i < n - 1 else out[k, t - 1, 0]
                out[k, t, i] = ctable[left | (out[k, t - 1, i] << s1) | (right << s2)]
    return out


def as_substrate(obj) -> TableRule | ElementaryRule | None:
    """Genome, table rule, elementary rule, ``"none"`` or ``"eca:<k>"`` -> substrate."""
    if obj is None or isinstance(obj, (TableRule, ElementaryRule)):
        return obj
    if isinstance(obj, Genome):
        return TableRule.from_genome(obj)
    if isinstance(obj, str):
        if obj == "none":
            return None
        if obj.startswith(("eca:", "rule")):
            try:
                return ElementaryRule(int(obj.split(":")[-1].removeprefix("rule")))
            except ValueError:
                pass
    raise ParameterError(f"unknown substrate {obj!r}")


def run_batch(substrate, codes0: np.ndarray, steps: int) -> np.ndarray:
    """``(B, steps, N)`` code histories for a batch of initial code rows."""
    return _run_batch(np.ascontiguousarray(codes0, dtype=np.int32), substrate.codes, substrate.channels, steps)


# ---------------------------------------------------------------- 5-bit task

@dataclass(frozen=True)
class FiveBitTask:
    distractor_len: int = 200
    input_bits: int = 5
    regions: int = 4
    region_size: int = 20
    substeps: int = 3
    input_channels: int = 4
    output_channels: int = 3
    # "all" concatenates the states after each CA sub-step, "last" keeps the final one
    features: str = "all"

    @property
    def width(self) -> int:
        return self.regions * self.region_size

    @property
    def total_steps(self) -> int:
        return 2 * self.input_bits + self.distractor_len

    def feature_dim(self, channels: int) -> int:
        per = self.width * channels
        return per * (self.substeps if self.features == "all" else 1)


def pattern_bits(pattern: int, n_bits: int = 5) -> list[int]:
    """Most significant bit first: 22 -> [1, 0, 1, 1, 0]."""
    if not 0 <= pattern < 2**n_bits:
        raise ParameterError(f"pattern {pattern} does not fit in {n_bits} bits")
    return [(pattern >> (n_bits - 1 - k)) & 1 for k in range(n_bits)]


def five_bit_signals(pattern: int, task: FiveBitTask = FiveBitTask()) -> tuple[np.ndarray, np.ndarray]:
    """Input lines ``(T, 4)`` and one-hot targets ``(T, 3)`` for one pattern.

    Steps ``1..5`` present the bits, ``6..T-6`` are distractor, ``T-5`` is the
    cue and the last five steps ask for recall (1-based).
    """
    bits = pattern_bits(pattern, task.input_bits)
    n, t_total = task.input_bits, task.total_steps
    inputs = np.zeros((t_total, 4), dtype=np.uint8)
    targets = np.zeros((t_total, 3), dtype=np.uint8)
    targets[:, 2] = 1
    for k, b in enumerate(bits):
        inputs[k, 0], inputs[k, 1] = b, 1 - b
    inputs[n:, 2] = 1
    cue = t_total - n - 1
    inputs[cue, 2], inputs[cue, 3] = 0, 1
    for k, b in enumerate(bits):
        t = cue + 1 + k
        targets[t] = (b, 1 - b, 0)
    return inputs, targets


def random_mapping(rng: np.random.Generator, task: FiveBitTask = FiveBitTask()) -> np.ndarray:
    """``(regions, 4)`` cell indices: each region gets the four lines at distinct cells."""
    rows = [r * task.region_size + rng.choice(task.region_size, task.input_channels, replace=False)
            for r in range(task.regions)]
    return np.array(rows, dtype=np.int64)


def _check_mapping(mapping: np.ndarray, width: int) -> np.ndarray:
    mapping = np.asarray(mapping, dtype=np.int64)
    if mapping.ndim != 2 or mapping.min() < 0 or mapping.max() >= width:
        raise ParameterError("input mapping out of grid bounds")
    return mapping


def inject_bits(state: np.ndarray, bits, mapping: np.ndarray) -> np.ndarray:
    """XOR input line ``j`` into channel 0 at ``mapping[r, j]`` for every region ``r``."""
    mapping = _check_mapping(mapping, state.shape[0])
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape != (mapping.shape[1],):
        raise ParameterError(f"expected {mapping.shape[1]} input bits")
    out = state.copy()
    for j, b in enumerate(bits):
        if b:
            out[mapping[:, j], 0] ^= 1
    return out


@numba.njit(cache=True)
def _five_bit_codes(inputs, mapping, ctable, channels, width, substeps, last_only):
    n_steps = inputs.shape[0]
    n_rec = 1 if last_only else substeps
    out = np.empty((n_steps, n_rec, width), dtype=np.int32)
    cur = np.zeros(width, dtype=np.int32)
    nxt = np.empty(width, dtype=np.int32)
    s1 = channels
    s2 = 2 * channels
    for t in range(n_steps):
        for j in range(inputs.shape[1]):
            if inputs[t, j]:
                for r in range(mapping.shape[0]):
                    cur[mapping[r, j]] ^= 1
        for k in range(substeps):
            for i in range(width):
                left = cur[i - 1] if i > 0 else cur[width - 1]
                right = cur[i + 1] if i < width - 1 else cur[0]
                nxt[i] = ctable[left | (cur[i] << s1) | (right << s2)]
            cur[:] = nxt
            if not last_only:
                out[t, k] = cur
            elif k == substeps - 1:
                out[t, 0] = cur
    return out


def run_5bit_sequence(substrate, pattern: int, mapping: np.ndarray,
                      task: FiveBitTask = FiveBitTask()) -> np.ndarray:
    """Binary features ``(T, F)`` of one pattern run from an all-zero grid."""
    sub = as_substrate(substrate)
    if sub is None:
        raise ParameterError("the 5-bit task needs a substrate")
    mapping = _check_mapping(mapping, task.width)
    inputs, _ = five_bit_signals(pattern, task)
    codes = _five_bit_codes(inputs, mapping, sub.codes, sub.channels, task.width, task.substeps,
                            task.features == "last")
    bits = decode_states(codes, sub.channels)  # (T, rec, N, C)
    return bits.reshape(task.total_steps, -1)


def five_bit_dataset(substrate, mapping, task: FiveBitTask = FiveBitTask()):
    """Stacked features and class labels (0 bit, 1 negated bit, 2 wait) for all patterns."""
    xs, ys = [], []
    for p in range(2**task.input_bits):
        xs.append(run_5bit_sequence(substrate, p, mapping, task))
        ys.append(np.argmax(five_bit_signals(p, task)[1], axis=1))
    return np.concatenate(xs), np.concatenate(ys)


def run_5bit_benchmark(substrate, runs: int = 100, seed: int = 0, task: FiveBitTask = FiveBitTask(),
                       readout: dict | None = None) -> dict:
    """Per run: fresh mapping, train on all 32 sequences, success iff every step is right."""
    sub = as_substrate(substrate)
    readout = dict(readout or {})
    per_run, errors = [], []
    for r in range(runs):
        mapping = random_mapping(make_rng(seed, 0, r), task)
        x, y = five_bit_dataset(sub, mapping, task)
        model = train_readout(x, y, seed=r, **readout)
        wrong = int(np.sum(model.predict(x) != y))
        per_run.append(wrong == 0)
        errors.append(wrong)
    return {
        "task": "5bit",
        "runs": runs,
        "per_run_success": per_run,
        "per_run_errors": errors,
        "successes": int(sum(per_run)),
        "mean": float(np.mean(per_run)),
    }


# ---------------------------------------------------------------- MNIST

def binarize(images: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """``(n, 784)`` uint8 with 1 where intensity / 255 >= threshold."""
    flat = np.asarray(images).reshape(len(images), -1)
    return (flat.astype(np.float64) / 255.0 >= threshold).astype(np.uint8)


def mnist_features(substrate, images: np.ndarray, steps: int = 4, include_initial: bool = False,
                   batch: int = 2000) -> np.ndarray:
    """Reservoir features of binarised images as a dense ``(n, F)`` uint8 array.

    No substrate: the 784 pixels. Otherwise channel 0 holds the image, other
    channels start at 0, and the states after ``steps`` updates (or the input
    plus ``steps - 1`` updates with ``include_initial``) are concatenated,
    step-major then cell then channel.
    """
    sub = as_substrate(substrate)
    bits = binarize(images)
    if sub is None:
        return bits
    out = np.empty((len(bits), steps * bits.shape[1] * sub.channels), dtype=np.uint8)
    for lo in range(0, len(bits), batch):
        chunk = bits[lo : lo + batch].astype(np.int32)
        hist = run_batch(sub, chunk, steps + 1)
        keep = hist[:, :steps] if include_initial else hist[:, 1:]
        out[lo : lo + len(chunk)] = decode_states(keep, sub.channels).reshape(len(chunk), -1)
    return out


def run_mnist_benchmark(substrate, dataset: dict, runs: int = 10, seed: int = 0, train_size: int | None = None,
                        steps: int = 4, include_initial: bool = False, readout: dict | None = None,
                        progress=None) -> dict:
    """Test accuracy of ``runs`` readouts differing only in their shuffling seed."""
    x_train, y_train = dataset["train"]
    x_test, y_test = dataset["test"]
    if train_size is not None:
        x_train, y_train = x_train[:train_size], y_train[:train_size]
    f_train = mnist_features(substrate, x_train, steps, include_initial)
    f_test = mnist_features(substrate, x_test, steps, include_initial)
    readout = dict(readout or {})
    acc = []
    for r in range(runs):
        model = train_readout(f_train, y_train, seed=seed + r, **readout)
        acc.append(model.score(f_test, y_test))
        if progress is not None:
            progress(r, acc[-1])
    return {
        "task": "mnist",
        "runs": runs,
        "n_features": int(f_train.shape[1]),
        "train_size": int(len(y_train)),
        "per_run_accuracy": acc,
        "mean": float(np.mean(acc)),
        "max": float(np.max(acc)),
        "std": float(np.std(acc)),
    }


# ---------------------------------------------------------------- robustness

def recovered(matrix: np.ndarray, burn_in: int = 100, low: float = 0.05, high: float = 0.95) -> bool:
    """Both states occupy between ``low`` and ``high`` of the sites after the burn-in."""
    frac = float(np.mean(matrix[burn_in:]))
    return low <= frac <= high


def run_robustness(genome: Genome, densities=(0.0, 0.01, 0.99, 1.0), width: int = 1000, steps: int = 1000,
                   seed: int = 0, burn_in: int = 100) -> list[dict]:
    """Channel-0 rasters from extreme initial densities, with a recovery verdict each."""
    rule = TableRule.from_genome(genome)
    out = []
    for k, density in enumerate(densities):
        initial = init_grid(width, genome.arch.channels, float(density), (0,), make_rng(seed, k))
        matrix = (rule.run_codes(encode_states(initial), steps) & 1).astype(np.uint8)
        tail = matrix[burn_in:]
        out.append({
            "density": float(density),
            "matrix": matrix,
            "recovered": recovered(matrix, burn_in),
            "fraction_state1": float(np.mean(tail)),
            "final_uniform": bool(tail[-1].min() == tail[-1].max()),
        })
    return out


def results_json(result: dict) -> str:
    return json.dumps({k: v for k, v in result.items() if k != "matrix"}, sort_keys=True, indent=2)
