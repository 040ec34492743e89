import json

import numpy as np
import pytest
import scipy.sparse as sp

from lrsplit.baselines import dopri5_dense
from lrsplit.errors import ContractError
from lrsplit.expmv import ExpmvConfig
from lrsplit.lyapunov import DLEProblem, solve_dle
from lrsplit.problems import (
    ProblemSpec,
    build_advection_operator,
    build_diffadv_operator,
    build_heat_operator,
    build_lqr_vectors,
    heat_dle_spec,
    lqr_dre_spec,
    propagate_mean,
    random_psd_lowrank,
    velocity_field,
)
from lrsplit.riccati import DREProblem


def test_heat_dtil2_by_hand():
    A = build_heat_operator(2).toarray()
    assert np.allclose(np.diag(A), -36.0)
    assert np.allclose(A, [[-36, 9, 9, 0], [9, -36, 0, 9], [9, 0, -36, 9], [0, 9, 9, -36]])


def test_heat_symmetric_and_eigenvalues():
    dtil = 5
    h = 1 / (dtil + 1)
    A = build_heat_operator(dtil)
    assert (A != A.T).nnz == 0
    i = np.arange(1, dtil + 1)
    s = np.sin(i * np.pi * h / 2) ** 2
    expected = np.sort((-(4 / h**2) * (s[:, None] + s[None, :])).ravel())
    assert np.allclose(np.sort(np.linalg.eigvalsh(A.toarray())), expected, atol=1e-10)


@pytest.mark.parametrize("dtil", [2, 5, 10])
def test_heat_negative_definite(dtil):
    assert np.linalg.eigvalsh(build_heat_operator(dtil).toarray()).max() < 0


def test_diffadv_dtil2_by_hand():
    h = 1 / 3
    x = np.array([1 / 3, 2 / 3])
    A = build_diffadv_operator(2).toarray()
    L = build_heat_operator(2).toarray()
    # index k = j*2 + i, x-neighbour of (0,j) is (1,j); y-neighbour of (i,0) is (i,1)
    assert A[0, 1] == pytest.approx(L[0, 1] - 10 * x[0] / (2 * h))
    assert A[1, 0] == pytest.approx(L[1, 0] + 10 * x[1] / (2 * h))
    assert A[0, 2] == pytest.approx(L[0, 2] - 100 * x[0] / (2 * h))
    assert A[2, 0] == pytest.approx(L[2, 0] + 100 * x[1] / (2 * h))
    assert np.allclose(np.diag(A), np.diag(L))
    assert np.linalg.norm(A - A.T) > 0


def test_lqr_vectors_dtil20():
    B, C = build_lqr_vectors(20)
    x_active = sorted({k % 20 for k in np.flatnonzero(B[:, 0])})
    assert [i + 1 for i in x_active] == [3, 4, 5, 6]  # one-based x-indices
    assert B.sum() == 4 * 20
    assert np.all(B[:, 0] * C[0] == 0)
    assert B.shape == (400, 1) and C.shape == (1, 400)


@pytest.mark.parametrize("dtil", [10, 15, 30])
def test_lqr_vectors_nonempty(dtil):
    B, C = build_lqr_vectors(dtil)
    assert np.count_nonzero(B) * np.count_nonzero(C) > 0


def test_random_factors_deterministic_and_psd():
    a = random_psd_lowrank(30, 4, 7)
    b = random_psd_lowrank(30, 4, 7)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.S, b.S)
    assert random_psd_lowrank(30, 0, 7).rank == 0
    for dist in ("uniform", "normal"):
        full = random_psd_lowrank(12, 12, 3, dist).to_dense()
        lam = np.linalg.eigvalsh(full)
        assert lam.min() > 0
        assert lam.min() >= -1e-12 * np.trace(full)
    with pytest.raises(ContractError):
        random_psd_lowrank(5, 6, 1)
    with pytest.raises(ContractError):
        random_psd_lowrank(5, 2, 1, "cauchy")


def test_zero_velocity_gives_zero_operator():
    ux, uy = velocity_field(6, "zero")
    A = build_advection_operator(6, ux, uy)
    assert A.nnz == 0
    x0 = np.arange(36.0)
    assert np.array_equal(propagate_mean(A, x0, 1.0), x0)


def test_constant_velocity_transports_mass():
    dtil = 20
    ux, uy = velocity_field(dtil, "constant", 1.0)
    A = build_advection_operator(dtil, ux, uy)
    h = 1 / (dtil + 1)
    xs = np.tile(np.arange(1, dtil + 1) * h, dtil)
    ys = np.repeat(np.arange(1, dtil + 1) * h, dtil)
    x0 = np.exp(-((xs - 0.3) ** 2 + (ys - 0.3) ** 2) / 0.01)
    t = 0.1
    m = propagate_mean(A, x0, t, ExpmvConfig(tol=1e-12))
    ref = dopri5_dense(lambda s, v: A @ v, x0, 0.0, t, 1e-10, 1e-12)
    assert np.allclose(m, ref, atol=1e-8 * np.abs(ref).max())
    # centre of mass moves along u = (1, 0.5); mass is conserved up to outflow
    cx0, cx = (xs @ x0) / x0.sum(), (xs @ m) / m.sum()
    cy0, cy = (ys @ x0) / x0.sum(), (ys @ m) / m.sum()
    assert cx - cx0 == pytest.approx(t * 1.0, abs=0.03)
    assert cy - cy0 == pytest.approx(t * 0.5, abs=0.03)
    assert m.sum() <= x0.sum() * (1 + 1e-12)


def test_advection_schemes_and_contracts():
    ux, uy = velocity_field(5, "rotational")
    up = build_advection_operator(5, ux, uy)
    ce = build_advection_operator(5, ux, uy, "centered")
    assert up.shape == ce.shape == (25, 25)
    # upwind rows have non-positive diagonal and non-negative off-diagonals
    D = up.toarray()
    assert np.all(np.diag(D) <= 0)
    assert np.all(D - np.diag(np.diag(D)) >= 0)
    with pytest.raises(ContractError):
        build_advection_operator(5, ux[:3], uy)
    with pytest.raises(ContractError):
        build_advection_operator(5, ux, uy, "spectral")
    with pytest.raises(ContractError):
        velocity_field(5, "turbulent")


def test_covariance_equation_solved_by_dle_solver():
    dtil = 6
    ux, uy = velocity_field(dtil, "rotational", 2.0)
    A = build_advection_operator(dtil, ux, uy) + 0.01 * build_heat_operator(dtil)
    d = dtil * dtil
    Q = random_psd_lowrank(d, 2, 1)
    X0 = random_psd_lowrank(d, 2, 2)
    p = DLEProblem(A.tocsr(), Q, X0, 0.0, 0.2)
    rep = solve_dle(p, "strang", d, 64, ExpmvConfig(tol=1e-12))
    ref = dopri5_dense(lambda t, X: A @ X + (A @ X).T + Q.to_dense(), X0.to_dense(), 0.0, 0.2)
    assert np.linalg.norm(rep.final.to_dense() - ref) <= 1e-3 * np.linalg.norm(ref)


def test_problem_spec_roundtrip(tmp_path):
    spec = heat_dle_spec(dtil=6, T=0.05)
    path = tmp_path / "p.json"
    spec.save(path)
    again = ProblemSpec.load(path)
    assert again == spec
    assert again.digest() == spec.digest()
    spec.solver["rank"] = 4
    assert spec.digest() == again.digest()
    p = again.build()
    assert isinstance(p, DLEProblem) and p.dim == 36
    q = lqr_dre_spec(dtil=6).build()
    assert isinstance(q, DREProblem) and q.P.rank == 1 and q.X0.rank == 0
    ident = lqr_dre_spec(dtil=6, x0="identity").build()
    assert np.allclose(ident.X0.to_dense(), np.eye(36))


def test_problem_spec_rejects_bad_input():
    with pytest.raises(ContractError):
        ProblemSpec.from_json(json.dumps({"kind": "dle", "bogus": 1}))
    with pytest.raises(ContractError):
        ProblemSpec(operator={"type": "wave", "dtil": 4}).build()
    with pytest.raises(ContractError):
        ProblemSpec(kind="dre", operator={"type": "heat", "dtil": 4}).build()
    with pytest.raises(ContractError):
        build_heat_operator(1)


def test_builders_are_byte_identical():
    a, b = build_diffadv_operator(7), build_diffadv_operator(7)
    assert a.data.tobytes() == b.data.tobytes() and np.array_equal(a.indices, b.indices)
    assert heat_dle_spec().to_json() == heat_dle_spec().to_json()
