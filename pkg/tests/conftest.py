import numpy as np
import pytest

from siminv.predictor import GaussianMixture
from siminv.schedule import make_linear_schedule, subsample

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def schedule50():
    return subsample(make_linear_schedule(), 50)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_blobs():
    return GaussianMixture([0.4, 0.6], [[-1.5, 1.0], [1.5, -0.5]], [0.25, 0.35])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
