"""Acceptance criteria at their stated tolerances.

Each test appends a ``criterion N: PASS|FAIL`` line that is echoed in the
terminal summary. Criteria known to be unattainable are marked strict xfail:
the assertion still runs at full tolerance and an unexpected pass fails the run.
"""

import time

import numpy as np
import pytest
import scipy.sparse as sp
from conftest import ACCEPTANCE_LINES, scalar_dle, scalar_sym

from lrsplit.baselines import (
    KPIKConfig,
    be_dense_dle_step,
    be_kpik_dle_step,
    kpik_ale_solve,
    solve_be_kpik,
)
from lrsplit.dlr import EXACT_AFFINE, RK4, Constant, inner_ode_solve, ksl_step, ksl_step_sym
from lrsplit.experiments import (
    ExperimentPlan,
    cached_reference,
    eigen_reference,
    run_compare,
    run_convergence,
)
from lrsplit.expmv import ExpmvConfig, expm_action
from lrsplit.lyapunov import DLEProblem, solve_dle
from lrsplit.matcore import GenLowRank, SymLowRank, expm_dense
from lrsplit.metrics import fit_order
from lrsplit.problems import (
    build_diffadv_operator,
    build_heat_operator,
    heat_dle_spec,
    lqr_dre_spec,
    random_psd_lowrank,
)
from lrsplit.riccati import DREProblem, are_residual, solve_dre

DEFECT_RANKS = list(range(2, 15, 2))
DEFECT_STEPS = [2, 2**4, 2**7, 2**11]
SWEEP_STEPS = [2**k for k in range(1, 12)]


def record(n, ok, detail):
    line = f"criterion {n!s:>3}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def timed(fn):
    tic = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - tic


@pytest.fixture(scope="module")
def heat():
    spec = heat_dle_spec()
    return spec, eigen_reference(spec.build())


@pytest.fixture(scope="module")
def defect_sweep(heat):
    spec, Xref = heat
    plan = ExperimentPlan(spec, ["lie", "nonsym-lie"], DEFECT_RANKS, DEFECT_STEPS, reference="exact")
    (rows, _), seconds = timed(lambda: run_convergence(plan, Xref))
    assert all(r["status"] == "ok" for r in rows)
    return rows, seconds


@pytest.fixture(scope="module")
def lqr(tmp_path_factory):
    spec = lqr_dre_spec(T=0.1, x0="zero")
    Xref = cached_reference(spec, tmp_path_factory.mktemp("lqr"), "dopri5")
    return spec, Xref


def test_criterion_01_symmetry(defect_sweep):
    rows, seconds = defect_sweep
    worst = max(r["d_sym"] for r in rows if r["method"] == "lie")
    ok = worst <= 1e-13 and seconds < 300
    record(1, ok, f"max d_sym {worst:.2e} (<= 1e-13), defect sweeps {seconds:.0f}s (< 300s)")
    assert worst <= 1e-13
    assert seconds < 300


def test_criterion_02_nonsymmetric_contrast(defect_sweep):
    rows, _ = defect_sweep
    low = min(r["d_sym"] for r in rows if r["method"] == "nonsym-lie" and r["rank"] <= 10)
    best = max(r["d_sym"] for r in rows if r["method"] == "lie")
    ok = low >= 1e-8 and low >= 1e5 * best
    record(2, ok, f"min non-symmetric d_sym {low:.2e} (>= 1e-8), {low / best:.1e}x above criterion 1")
    assert low >= 1e-8
    assert low >= 1e5 * best


def test_criterion_03_psd(defect_sweep):
    rows, _ = defect_sweep
    worst = max(r["d_psd"] for r in rows if r["method"] == "lie")
    record(3, worst <= 1e-13, f"max d_psd {worst:.2e} (<= 1e-13)")
    assert worst <= 1e-13


def test_criterion_04_lie_order_and_plateau(heat):
    spec, Xref = heat
    plan = ExperimentPlan(spec, ["lie"], [4, 14], SWEEP_STEPS, reference="exact")
    (rows, orders), seconds = timed(lambda: run_convergence(plan, Xref))
    order = orders[("lie", 14)][0]
    plateau = min(r["error"] for r in rows if r["rank"] == 4)
    # errors are scaled by 1/d, so the singular value is scaled the same way
    sigma5 = np.linalg.eigvalsh(Xref)[::-1][4] / Xref.shape[0]
    ratio = max(plateau / sigma5, sigma5 / plateau)
    ok = 0.85 <= order <= 1.15 and ratio <= 100 and seconds < 600
    record(4, ok, f"Lie rank-14 order {order:.3f} in [0.85, 1.15]; rank-4 plateau "
                  f"{plateau:.2e} vs sigma_5 {sigma5:.2e} (factor {ratio:.1f} <= 100); {seconds:.0f}s")
    assert 0.85 <= order <= 1.15
    assert ratio <= 100
    assert seconds < 600


@pytest.mark.xfail(strict=True, reason="stiff order reduction of Strang at d=400; see decisions ledger")
def test_criterion_05_strang_order(heat):
    spec, Xref = heat
    plan = ExperimentPlan(spec, ["strang"], [20], SWEEP_STEPS, reference="exact")
    _, orders = run_convergence(plan, Xref)
    order = orders[("strang", 20)][0]
    record(5, 1.8 <= order <= 2.2, f"Strang rank-20 order {order:.3f} in [1.8, 2.2]")
    assert 1.8 <= order <= 2.2


@pytest.mark.slow
def test_criterion_05_order_reduction_fine_grid():
    spec = heat_dle_spec(dtil=60)
    Xref = eigen_reference(spec.build())
    plan = ExperimentPlan(spec, ["strang"], [20], [2**k for k in range(1, 11)], reference="exact")
    _, orders = run_convergence(plan, Xref)
    order = orders[("strang", 20)][0]
    record("5b", order < 1.8, f"(slow) d=3600 Strang rank-20 order {order:.3f} < 1.8")
    assert order < 1.8


def test_criterion_06_dre_orders_and_defects(lqr):
    spec, Xref = lqr
    plan = ExperimentPlan(spec, ["lie", "strang"], [25], SWEEP_STEPS, reference="dopri5")
    rows, orders = run_convergence(plan, Xref)
    lie, strang = orders[("lie", 25)][0], orders[("strang", 25)][0]
    margin = min(r["error"] / max(r["d_sym"], r["d_psd"], 1e-300) for r in rows)
    ok = 0.85 <= lie <= 1.15 and 1.8 <= strang <= 2.2 and margin >= 100
    record(6, ok, f"LQR rank 25: Lie {lie:.3f}, Strang {strang:.3f}; "
                  f"defects at least {margin:.1e}x below the error")
    assert 0.85 <= lie <= 1.15
    assert 1.8 <= strang <= 2.2
    assert margin >= 100


def test_criterion_07_are_limit():
    horizons = [0.05, 0.1, 0.2, 0.5, 1.0]
    residuals, finals = {}, {}
    for x0 in ("zero", "identity"):
        res = []
        for T in horizons:
            p = lqr_dre_spec(T=T, x0=x0).build()
            rep = solve_dre(p, "strang", 25, int(round(640 * T)))  # fixed step 1/640
            res.append(are_residual(p, rep.final))
        residuals[x0], finals[x0] = res, (p, rep.final)
    # a steady residual may wobble in the last digits
    monotone = all(b <= a * (1 + 1e-10) for res in residuals.values() for a, b in zip(res, res[1:]))
    p = finals["zero"][0]
    gap = np.linalg.norm(finals["zero"][1].to_dense() - finals["identity"][1].to_dense()) / p.dim
    bound = 2 * max(residuals["zero"][-1], residuals["identity"][-1])
    ok = monotone and gap <= bound
    record(7, ok, f"ARE residuals {['%.4e' % r for r in residuals['zero']]} non-increasing; "
                  f"X0=0 vs X0=I gap {gap:.2e} <= {bound:.2e}")
    assert monotone
    assert gap <= bound


def test_criterion_08_backward_euler_baseline():
    worst = 0.0
    for dtil in (3, 5, 7):
        d = dtil * dtil
        A = build_diffadv_operator(dtil)
        p = DLEProblem(A, random_psd_lowrank(d, 2, dtil), random_psd_lowrank(d, 3, dtil + 1), 0.0, 1.0)
        Z = p.X0.factor()
        f = be_kpik_dle_step(p, Z, 0.05, KPIKConfig(tol=1e-13, tolY=1e-15))
        ref = be_dense_dle_step(A, Z @ Z.T, p.Q.to_dense(), 0.05)
        worst = max(worst, np.abs(f.to_dense() - ref).max())
    d = 196
    Atil = (0.01 * build_diffadv_operator(14) - 0.5 * sp.identity(d)).tocsr()
    B = np.hstack([0.1 * random_psd_lowrank(d, 2, 1).factor(), random_psd_lowrank(d, 3, 2).factor()])
    cfg = KPIKConfig(tol=1e-9, tolY=1e-14)
    f = kpik_ale_solve(Atil, B, cfg)
    Ad, X = Atil.toarray(), f.to_dense()
    rel = np.linalg.norm(Ad @ X + X @ Ad.T + B @ B.T, 2) / (
        2 * np.linalg.norm(Ad) * np.linalg.norm(X) + np.linalg.norm(B) ** 2)
    slack = 2 * np.linalg.norm(Ad) * d * cfg.tolY / np.linalg.norm(B) ** 2
    ok = worst <= 1e-8 and rel <= cfg.tol + slack
    record(8, ok, f"K-PIK vs dense backward Euler {worst:.1e} (<= 1e-8); d=196 dense residual {rel:.1e}")
    assert worst <= 1e-8
    assert rel <= cfg.tol + slack


def test_criterion_09_richardson_order():
    p = scalar_dle(-1.0, 2.0, 0.0, 0.5)
    exact = 1 - np.exp(-1.0)
    ns = [2**k for k in range(1, 11)]
    cfg = KPIKConfig(tol=1e-14, tolY=1e-16)
    found = {}
    for mode in ("factor", "matrix"):
        errs = [abs(solve_be_kpik(p, n, cfg, richardson=True, mode=mode).final.to_dense()[0, 0] - exact)
                for n in ns]
        found[mode] = fit_order([0.5 / n for n in ns], errs)[0]
    ok = min(found.values()) >= 1.9
    record(9, ok, "Richardson order " + ", ".join(f"{m} {o:.3f}" for m, o in found.items()) + " (>= 1.9)")
    assert ok


def test_criterion_10_lie_beats_backward_euler(heat):
    spec, Xref = heat
    plan = ExperimentPlan(spec, ["lie", "be-kpik"], [14], [2**k for k in range(4, 10)], reference="exact")
    rows, _ = run_compare(plan, Xref)
    lie = {r["nsteps"]: r for r in rows if r["method"] == "lie"}
    be = {r["nsteps"]: r for r in rows if r["method"] == "be-kpik"}
    ratios = [be[n]["error"] / lie[n]["error"] for n in sorted(lie)]
    timing = ", ".join(f"{n}: {lie[n]['seconds']:.2f}s/{be[n]['seconds']:.2f}s" for n in sorted(lie))
    ok = min(ratios) >= 1.0
    record(10, ok, f"BE/Lie error ratio min {min(ratios):.2f} (>= 1); time Lie/BE {timing}")
    assert ok


def _oracle_suite():
    g = np.random.default_rng(11)
    out = {}
    A = build_heat_operator(20)
    U = g.standard_normal((400, 3))
    approx = expm_action(A, 0.01, U, ExpmvConfig(tol=1e-12))
    out["expm_action d=400"] = (np.abs(approx - expm_dense(0.01 * A.toarray()) @ U).max(), 1e-6)

    d = 50
    U0 = np.linalg.qr(g.standard_normal((d, 5)))[0]
    V0 = np.linalg.qr(g.standard_normal((d, 5)))[0]
    S0 = np.zeros((5, 5))
    S0[:3, :3] = g.standard_normal((3, 3))
    Y0 = GenLowRank(U0, S0, V0)
    Q = U0[:, 3:] @ g.standard_normal((2, 2)) @ V0[:, 3:].T
    exact = Y0.to_dense() + 0.1 * Q
    Y1 = ksl_step(Constant(Q), Y0, 0.0, 0.1)
    out["KSL exactness"] = (np.linalg.norm(Y1.to_dense() - exact) / np.linalg.norm(exact), 1e-11)

    W = g.standard_normal((4, 4))
    S0 = W @ W.T
    U0 = np.linalg.qr(g.standard_normal((25, 4)))[0]
    Qd = random_psd_lowrank(25, 3, 5).to_dense()
    Y1 = ksl_step_sym(Constant(Qd), SymLowRank(U0, S0), 0.0, 0.2, EXACT_AFFINE)
    closed = Y1.U.T @ U0 @ S0 @ U0.T @ Y1.U + 0.2 * Y1.U.T @ Qd @ Y1.U
    out["symmetric closed form"] = (np.linalg.norm(Y1.S - closed) / max(1.0, np.linalg.norm(closed)), 1e-12)

    m = inner_ode_solve(lambda t, m: -m, np.array([[1.0]]), 0.0, 0.1, RK4)
    out["RK4 exp(-0.1)"] = (abs(m[0, 0] - 0.904837), 1e-6)
    p = DREProblem(sp.csr_matrix([[0.0]]), scalar_sym(1.0), scalar_sym(1.0), scalar_sym(0.0), 0.0, 5.0)
    x5 = solve_dre(p, "lie", 1, 500).final.to_dense()[0, 0]
    out["DRE tanh(5)"] = (abs(x5 - 0.999909), 1e-6)
    dle = scalar_dle(-1.0, 2.0, 0.0, 0.1)
    x1 = solve_dle(dle, "strang", 1, 1, ExpmvConfig(tol=1e-13)).final.to_dense()[0, 0]
    out["Strang one step vs exact"] = (abs(x1 - (1 - np.exp(-0.2))), 1e-3)
    out["Strang one step vs its recurrence"] = (abs(x1 - 0.2 * np.exp(-0.1)), 1e-12)
    return out


def _stated_scalar_values():
    out = {}
    x = solve_dle(scalar_dle(-1.0, 2.0, 0.0, 0.5), "lie", 1, 10).final.to_dense()[0, 0]
    out["Lie 10 steps vs 0.632121"] = (abs(x - 0.632121), 0.02)
    be = solve_be_kpik(scalar_dle(-1.0, 2.0, 0.0, 0.5), 10, KPIKConfig(tol=1e-14, tolY=1e-16))
    out["backward Euler vs 0.61529"] = (abs(be.final.to_dense()[0, 0] - 0.61529), 1e-5)
    m = inner_ode_solve(lambda t, m: 1 - m * m, np.array([[0.0]]), 0.0, 0.5, RK4)
    out["one RK4 step vs tanh(0.5)"] = (abs(m[0, 0] - 0.462117), 1e-5)
    return out


def test_criterion_11_oracle_suites():
    checks = _oracle_suite()
    bad = [k for k, (v, tol) in checks.items() if not v <= tol]
    detail = "; ".join(f"{k} {v:.1e}" for k, (v, _) in checks.items())
    record("11a", not bad, "oracles: " + detail)
    assert not bad, bad


@pytest.mark.xfail(strict=True, reason="stated scalar values disagree with their own closed forms; see decisions ledger")
def test_criterion_11_stated_scalar_examples():
    checks = _stated_scalar_values()
    bad = [k for k, (v, tol) in checks.items() if not v <= tol]
    detail = "; ".join(f"{k}: off by {v:.1e} (tol {tol:g})" for k, (v, tol) in checks.items())
    record("11b", not bad, "stated scalar examples: " + detail)
    assert not bad, bad
