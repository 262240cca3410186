import numpy as np
import pytest
from hypothesis import settings

from vmscatter.fields import BumpField, ZeroField
from vmscatter.flow import BumpProfile, InitialData, SpeciesData, default_initial_data
from vmscatter.relkin import SpeciesParams

# field constructors scan their budget once; keep timing out of the properties
settings.register_profile("vmscatter", deadline=None)
settings.load_profile("vmscatter")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def data():
    return default_initial_data()


@pytest.fixture(scope="session")
def bump():
    return BumpField(0.05)


@pytest.fixture(scope="session")
def zero():
    return ZeroField()


@pytest.fixture(scope="session")
def blob():
    """Single-species (non-neutral) blob used by the quadrature fixtures."""
    sp = SpeciesParams(1.0, 1.0, 1.0, "blob")
    prof = BumpProfile(1.0, (0.0, 0.0, 0.0), 1.0, (0.3, 0.1, 0.0), 0.6, 4)
    return InitialData([SpeciesData(sp, prof)], require_neutral=False)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects the one-line verdicts printed after the run."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
