import dataclasses

import numpy as np
import pytest

from aaoinv import kernels
from aaoinv.diagnostics import Grid1D, ManufacturedSpec, manufactured_problem


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture(scope="session")
def desk():
    """Default desk problem in full mode and its truth."""
    return manufactured_problem(ManufacturedSpec(), Grid1D(63, 64, 1.0))


@pytest.fixture(scope="session")
def desk_linear(desk):
    problem, truth = desk
    return dataclasses.replace(problem, mode="linear_head"), truth


@pytest.fixture(scope="session")
def small():
    return manufactured_problem(ManufacturedSpec(width=8), Grid1D(15, 12, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
