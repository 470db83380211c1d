import numpy as np
import pytest

from biharmonic_nodal.flow import FlowConfig
from biharmonic_nodal.model import build_problem
from biharmonic_nodal.solver import SolverConfig, solve

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def reference_problem():
    return build_problem()


@pytest.fixture(scope="session")
def small_problem():
    return build_problem(n_nodes=200)


@pytest.fixture(scope="session")
def reference_bundle(reference_problem):
    return solve(reference_problem, FlowConfig(), SolverConfig())


@pytest.fixture(scope="session")
def small_bundle(small_problem):
    return solve(small_problem, FlowConfig(), SolverConfig())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
