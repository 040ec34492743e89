import numpy as np
import pytest
import scipy.sparse as sp

from lrsplit.lyapunov import DLEProblem
from lrsplit.matcore import SymLowRank
from lrsplit.problems import build_heat_operator, random_psd_lowrank


def scalar_sym(x: float) -> SymLowRank:
    return SymLowRank(np.eye(1), np.array([[float(x)]]))


def scalar_dle(a: float, q: float, x0: float, T: float) -> DLEProblem:
    return DLEProblem(sp.csr_matrix([[a]]), scalar_sym(q), scalar_sym(x0), 0.0, T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_heat_dle():
    """d = 16 heat DLE with rank-3 Q and rank-4 X0 on [0, 0.1]."""
    A = build_heat_operator(4)
    return DLEProblem(A, random_psd_lowrank(16, 3, 1), random_psd_lowrank(16, 4, 2), 0.0, 0.1)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
