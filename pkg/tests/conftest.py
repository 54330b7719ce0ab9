import numpy as np
import pytest

from hcpe.grid import Grid
from hcpe.thermo import Equilibrium


@pytest.fixture
def small_grid():
    return Grid(8, 8, 9)


@pytest.fixture
def grid16():
    return Grid(16, 16, 17)


@pytest.fixture
def eq9():
    return Equilibrium.create(1.0, 1.0, 9)


@pytest.fixture
def eq17():
    return Equilibrium.create(1.0, 1.0, 17)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Store a one-line verdict; all verdicts appear in the terminal summary."""

    def record(number, ok, detail):
        _CRITERIA.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
