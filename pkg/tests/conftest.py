import numpy as np
import pytest

from gpmppi.dynamics import DEFAULT_TERRAINS, NominalParams, generate_shared_training_data
from gpmppi.gp import fit_auto


@pytest.fixture(scope="session")
def nominal():
    return NominalParams()


@pytest.fixture(scope="session")
def terrain_gp(nominal):
    """Shared-input GP over the three default terrains (300 points, 6 outputs)."""
    X, Y = generate_shared_training_data(DEFAULT_TERRAINS, nominal, 300, np.random.default_rng(11))
    return fit_auto(X, Y)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance verdicts, one line per criterion, echoed in the terminal summary
# so they survive output capture.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
