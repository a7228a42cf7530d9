import os
import warnings
from pathlib import Path

import pytest

from critnca.readout import ConvergenceWarning

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = Path(os.environ.get("CRITNCA_MNIST", ROOT / "data" / "mnist"))
SHIPPED_GENOME = ROOT / "src" / "critnca" / "data" / "critical_genome.json"


@pytest.fixture(autouse=True)
def _quiet_convergence():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        yield


@pytest.fixture(scope="session")
def shipped_genome():
    from critnca.nca import Genome

    return Genome.load(SHIPPED_GENOME)


@pytest.fixture(scope="session")
def mnist():
    from critnca.idx import load_mnist

    if not (MNIST_DIR / "train-images-idx3-ubyte.gz").exists():
        pytest.skip(f"MNIST not found in {MNIST_DIR} (see README)")
    return load_mnist(MNIST_DIR)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(number: int, title: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    print(ACCEPTANCE[number])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
