import numpy as np
import pytest

from bopo.grid import BoxGrid, RadialGrid
from bopo.kernel import KernelParams


@pytest.fixture(scope="session")
def radial512():
    return RadialGrid(512)


@pytest.fixture(scope="session")
def radial1024():
    return RadialGrid(1024)


@pytest.fixture(scope="session")
def box32():
    return BoxGrid(32, 6.0)


@pytest.fixture(scope="session")
def unit():
    return KernelParams(1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one summary line per acceptance criterion, printed at the end of the run."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
