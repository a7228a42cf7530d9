"""Binary 1D neural cellular automaton.

The transition rule is a three-layer network applied to every cell's
3-cell neighbourhood (periodic boundary) across all channels:

    conv (kernels x 3*channels) -> ReLU -> dense (hidden) -> ReLU
    -> dense (channels) -> step

Parameters live in one flat vector, laid out as
``conv_w (K, C, 3) | conv_b (K) | hid_w (H, K) | hid_b (H) | out_w (C, H) | out_b (C)``.
The network input for cell ``i`` is ``x[c*3 + o] = state[i + o - 1, c]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from critnca.grid import ParameterError, validate_state

GENOME_FORMAT = "critnca-genome/1"
# 2**24 entries of channel codes is the largest table we agree to build
MAX_TABLE_BITS = 24


SHIPPED_GENOME = "critical_genome.json"


class NumericError(ArithmeticError):
    """Non-finite network parameters."""


@dataclass(frozen=True)
class Architecture:
    channels: int = 5
    neighborhood: int = 3
    kernels: int = 30
    hidden: int = 30

    def __post_init__(self):
        if self.neighborhood != 3:
            raise ParameterError("only neighbourhood size 3 is supported")
        if min(self.channels, self.kernels, self.hidden) < 1:
            raise ParameterError(f"layer sizes must be >= 1: {self}")

    @property
    def inputs(self) -> int:
        return self.neighborhood * self.channels

    @property
    def parameter_count(self) -> int:
        return parameter_count(self)


def parameter_count(arch: Architecture) -> int:
    k, h, c = arch.kernels, arch.hidden, arch.channels
    return k * arch.inputs + k + h * k + h + c * h + c


@dataclass(frozen=True)
class Genome:
    params: np.ndarray
    arch: Architecture = field(default_factory=Architecture)
    version: str = GENOME_FORMAT

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64).ravel()
        if params.size != self.arch.parameter_count:
            raise ParameterError(
                f"genome has {params.size} parameters, architecture needs {self.arch.parameter_count}"
            )
        if not np.all(np.isfinite(params)):
            raise NumericError("genome parameters must be finite")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @classmethod
    def zeros(cls, arch: Architecture | None = None) -> "Genome":
        arch = arch or Architecture()
        return cls(np.zeros(arch.parameter_count), arch)

    @classmethod
    def random(cls, rng: np.random.Generator, arch: Architecture | None = None, scale: float = 1.0) -> "Genome":
        arch = arch or Architecture()
        return cls(scale * rng.standard_normal(arch.parameter_count), arch)

    def layers(self) -> tuple[np.ndarray, ...]:
        """``(conv_w, conv_b, hid_w, hid_b, out_w, out_b)`` with conv_w as (K, 3*C)."""
        a = self.arch
        shapes = [(a.kernels, a.inputs), (a.kernels,), (a.hidden, a.kernels), (a.hidden,),
                  (a.channels, a.hidden), (a.channels,)]
        out, pos = [], 0
        for shape in shapes:
            n = int(np.prod(shape))
            out.append(np.ascontiguousarray(self.params[pos : pos + n].reshape(shape)))
            pos += n
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "format_version": self.version,
            "arch": {
                "channels": self.arch.channels,
                "neighborhood": self.arch.neighborhood,
                "kernels": self.arch.kernels,
                "hidden": self.arch.hidden,
            },
            # repr floats round-trip exactly through json
            "params": [float(p) for p in self.params],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Genome":
        try:
            version = data["format_version"]
            arch = Architecture(**data["arch"])
            params = data["params"]
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"malformed genome record: {exc}") from exc
        if version != GENOME_FORMAT:
            raise ParameterError(f"unsupported genome format {version!r}")
        return cls(np.asarray(params, dtype=np.float64), arch, version)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Genome":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError(f"cannot parse genome file {path}: {exc}") from exc
        return cls.from_dict(data)


@numba.njit(cache=True)
def _forward(x, w1, b1, w2, b2, w3, b3):
    # fixed accumulation order per row: the result for a given input row does
    # not depend on how many rows are evaluated together
    m_rows = x.shape[0]
    n_k, n_in = w1.shape
    n_h = w2.shape[0]
    n_c = w3.shape[0]
    out = np.empty((m_rows, n_c), dtype=np.uint8)
    h1 = np.empty(n_k)
    h2 = np.empty(n_h)
    for m in range(m_rows):
        for k in range(n_k):
            acc = b1[k]
            for j in range(n_in):
                if x[m, j] != 0:
                    acc += w1[k, j]
            h1[k] = acc if acc > 0.0 else 0.0
        for h in range(n_h):
            acc = b2[h]
            for k in range(n_k):
                acc += w2[h, k] * h1[k]
            h2[h] = acc if acc > 0.0 else 0.0
        for c in range(n_c):
            acc = b3[c]
            for h in range(n_h):
                acc += w3[c, h] * h2[h]
            out[m, c] = 1 if acc > 0.0 else 0
    return out


def network_inputs(state: np.ndarray) -> np.ndarray:
    """``(N, 3*C)`` neighbourhood inputs with periodic wrap."""
    left = np.roll(state, 1, axis=0)
    right = np.roll(state, -1, axis=0)
    # (N, C, 3) -> x[c*3 + o]
    return np.ascontiguousarray(np.stack([left, state, right], axis=2).reshape(state.shape[0], -1))


def forward(x: np.ndarray, genome: Genome) -> np.ndarray:
    """Apply the transition network to rows of binary inputs."""
    return _forward(np.ascontiguousarray(x, dtype=np.uint8), *genome.layers())


def step(state: np.ndarray, genome: Genome) -> np.ndarray:
    """One synchronous update of every cell, computed through the network."""
    validate_state(state)
    if state.shape[1] != genome.arch.channels:
        raise ParameterError(f"state has {state.shape[1]} channels, genome expects {genome.arch.channels}")
    return forward(network_inputs(state), genome)


def _pattern_inputs(channels: int) -> np.ndarray:
    n_bits = 3 * channels
    p = np.arange(2**n_bits, dtype=np.int64)
    return ((p[:, None] >> np.arange(n_bits)) & 1).astype(np.uint8)


def export_lookup_table(genome: Genome, max_bits: int = MAX_TABLE_BITS) -> np.ndarray:
    """Next state for every neighbourhood pattern, shape ``(2**(3C), C)``.

    Row ``p`` is the pattern whose bit ``c*3 + o`` is channel ``c`` of the
    left (o=0), centre (o=1) or right (o=2) cell.
    """
    n_bits = genome.arch.inputs
    if n_bits > max_bits:
        raise ParameterError(f"lookup table would need 2**{n_bits} entries (limit 2**{max_bits})")
    return forward(_pattern_inputs(genome.arch.channels), genome)


def encode_states(states: np.ndarray) -> np.ndarray:
    """Pack the channel bits of each cell into one integer code (bit c = channel c)."""
    weights = (1 << np.arange(states.shape[-1])).astype(np.int64)
    return (states.astype(np.int64) @ weights).astype(np.int32)


def decode_states(codes: np.ndarray, channels: int) -> np.ndarray:
    return ((codes[..., None] >> np.arange(channels)) & 1).astype(np.uint8)


def code_table(table: np.ndarray) -> np.ndarray:
    """Reindex a pattern table by ``left | centre << C | right << 2C`` codes."""
    n_patterns, channels = table.shape
    q = np.arange(n_patterns, dtype=np.int64)
    left = q & ((1 << channels) - 1)
    centre = (q >> channels) & ((1 << channels) - 1)
    right = q >> (2 * channels)
    p = np.zeros_like(q)
    for c in range(channels):
        p |= ((left >> c) & 1) << (3 * c)
        p |= ((centre >> c) & 1) << (3 * c + 1)
        p |= ((right >> c) & 1) << (3 * c + 2)
    return encode_states(table[p])


@numba.njit(cache=True)
def _run_codes(codes0, ctable, channels, steps):
    n = codes0.shape[0]
    out = np.empty((steps, n), dtype=np.int32)
    out[0] = codes0
    s1 = channels
    s2 = 2 * channels
    for t in range(1, steps):
        prev = out[t - 1]
        cur = out[t]
        for i in range(n):
            left = prev[i - 1] if i > 0 else prev[n - 1]
            right = prev[i + 1] if i < n - 1 else prev[0]
            cur[i] = ctable[left | (prev[i] << s1) | (right << s2)]
    return out


class TableRule:
    """Table-driven form of a genome, for fast repeated simulation."""

    def __init__(self, table: np.ndarray):
        self.table = table
        self.channels = table.shape[1]
        self.codes = code_table(table).astype(np.int32)

    @classmethod
    def from_genome(cls, genome: Genome) -> "TableRule":
        return cls(export_lookup_table(genome))

    def run_codes(self, initial_codes: np.ndarray, steps: int) -> np.ndarray:
        return _run_codes(np.ascontiguousarray(initial_codes, dtype=np.int32), self.codes, self.channels, steps)

    def simulate(self, initial: np.ndarray, steps: int) -> np.ndarray:
        return decode_states(self.run_codes(encode_states(initial), steps), self.channels)

    def step(self, state: np.ndarray) -> np.ndarray:
        return self.simulate(state, 2)[1]


def simulate(
    initial: np.ndarray,
    genome: Genome,
    steps: int,
    record: bool = True,
    method: str = "auto",
) -> np.ndarray:
    """Run ``steps - 1`` updates from ``initial``.

    Returns the ``(steps, N, C)`` raster whose row 0 is ``initial``, or only
    the final state when ``record`` is false. ``method`` is ``"table"``,
    ``"network"`` or ``"auto"`` (table when it has at most 2**15 entries);
    both produce identical rasters.
    """
    validate_state(initial)
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if initial.shape[1] != genome.arch.channels:
        raise ParameterError(f"state has {initial.shape[1]} channels, genome expects {genome.arch.channels}")
    if method == "auto":
        method = "table" if genome.arch.inputs <= 15 else "network"
    if method == "table":
        raster = TableRule.from_genome(genome).simulate(initial.astype(np.uint8), steps)
        return raster if record else raster[-1]
    if method != "network":
        raise ParameterError(f"unknown simulation method {method!r}")
    state = initial.astype(np.uint8)
    if not record:
        for _ in range(steps - 1):
            state = step(state, genome)
        return state
    raster = np.empty((steps,) + state.shape, dtype=np.uint8)
    raster[0] = state
    for t in range(1, steps):
        raster[t] = step(raster[t - 1], genome)
    return raster


def load_shipped_genome() -> Genome:
    """The evolved genome bundled with the package."""
    from importlib.resources import files

    text = files("critnca").joinpath("data", SHIPPED_GENOME).read_text()
    return Genome.from_dict(json.loads(text))
