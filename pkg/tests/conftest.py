import numpy as np
import pytest

from easi_lab.datagen import concave_params


@pytest.fixture(scope="session")
def params3():
    """Concave parameters, J=3, L=2, R=2, no price-demographic interactions."""
    return concave_params(J=3, L=2, R=2, seed=11)


@pytest.fixture(scope="session")
def params4_inter():
    """J=4, L=2, R=3 with interactions, for the richest code paths."""
    return concave_params(J=4, L=2, R=3, seed=5, interactions=True)


def random_points(params, n, seed, p_sd=0.25, x_sd=0.5):
    rng = np.random.default_rng(seed)
    p = rng.normal(0, p_sd, (n, params.J))
    z = rng.uniform(-1, 1, (n, params.L))
    x = rng.normal(0, x_sd, n)
    return p, z, x


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
