"""Critical neural cellular automata as reservoir-computing substrates."""

from critnca.grid import ParameterError, extract_channel, init_grid, make_rng
from critnca.nca import Architecture, Genome, load_shipped_genome, simulate, step

__all__ = [
    "Architecture",
    "Genome",
    "ParameterError",
    "extract_channel",
    "init_grid",
    "load_shipped_genome",
    "make_rng",
    "simulate",
    "step",
]

__version__ = "0.1.0"
