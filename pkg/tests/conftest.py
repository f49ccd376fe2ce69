import numpy as np
import pytest

from peassim.model import ForcingSpec, PhysicalParams
from peassim.spectral import Domain, Grid, SpectralSpace


@pytest.fixture(scope="session")
def space32():
    return SpectralSpace()


@pytest.fixture(scope="session")
def space16():
    return SpectralSpace(Domain(), Grid(16, 16, 16))


@pytest.fixture(scope="session")
def space_aniso():
    return SpectralSpace(Domain(2.0, 3.0, 1.5), Grid(16, 12, 10))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def forced16(space16):
    return PhysicalParams(0.1, 1.0, ForcingSpec.preset(space16))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES
