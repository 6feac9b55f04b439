import numpy as np
import pytest

from afd.design import design_input
from afd.model import parse_model_file, table1_path


@pytest.fixture(scope="session")
def table1():
    return parse_model_file(table1_path())


@pytest.fixture(scope="session")
def nominal(table1):
    return table1.nominal_models()


@pytest.fixture(scope="session")
def design(table1):
    return design_input(table1, starts=64, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_stable(rng, n, m=1, p=1, radius=0.9):
    """Random stable model with spectral radius ``radius``."""
    from afd.sysalg import StateSpaceModel, spectral_radius
    A = rng.standard_normal((n, n))
    A *= radius / max(spectral_radius(A), 1e-12)
    return StateSpaceModel(A, rng.standard_normal((n, m)),
                           rng.standard_normal((p, n)), rng.standard_normal((p, m)))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
