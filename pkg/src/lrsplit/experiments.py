"""Convergence and comparison sweeps, reference solutions and their on-disk cache.

Results tables are CSV (UTF-8, header row, floats as ``%.16e``) with columns

    method, rank, nsteps, error, d_sym, d_psd, seconds, status

``error`` is the scaled Frobenius distance to the reference at the final time,
``d_sym`` and ``d_psd`` are the final defects relative to ``||X_ref||_F``,
``rank`` is the requested rank (for ``be-kpik`` / ``richardson`` the rank
actually produced), ``status`` is ``ok`` or the name of the exception that
stopped the cell.

Reference binaries: 8-byte magic ``LRSREF01``, two little-endian uint64
(rows, cols), then the entries as little-endian float64 in row-major order.
"""

from __future__ import annotations

import csv
import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .baselines import KPIKConfig, dle_rhs, dopri5_dense, dre_rhs, solve_be_kpik
from .errors import ContractError, LowRankError
from .expmv import ExpmvConfig
from .lyapunov import DLEProblem, solve_dle
from .matcore import GenLowRank
from .metrics import defect_psd, defect_sym, error_scaled, fit_order
from .problems import ProblemSpec
from .report import SolveReport
from .riccati import DREProblem, solve_dre

REFERENCE_MAGIC = b"LRSREF01"
CSV_COLUMNS = ("method", "rank", "nsteps", "error", "d_sym", "d_psd", "seconds", "status")
DLE_METHODS = ("lie", "strang", "nonsym-lie", "be-kpik", "richardson", "dopri5")
DRE_METHODS = ("lie", "strang", "dopri5")
METHOD_ORDER = {m: i for i, m in enumerate(DLE_METHODS)}


# --------------------------------------------------------------------------- references


def write_reference(path, X: np.ndarray) -> None:
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ContractError("reference must be a matrix")
    with open(path, "wb") as fh:
        fh.write(REFERENCE_MAGIC)
        fh.write(struct.pack("<QQ", *X.shape))
        fh.write(X.tobytes(order="C"))


def read_reference(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != REFERENCE_MAGIC:
            raise ContractError(f"{path}: not a reference file")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ContractError(f"{path}: truncated reference ({data.size} of {rows * cols} entries)")
    return data.reshape(rows, cols).astype(float)


def dopri5_reference(p, rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """Dense DOPRI5 solution at ``p.T``."""
    if isinstance(p, DREProblem):
        rhs = dre_rhs(p.A, p.Q, p.P)
    else:
        rhs = dle_rhs(p.A, p.Q)
    return dopri5_dense(rhs, p.X0.to_dense(), p.t0, p.T, rtol, atol)


def eigen_reference(p: DLEProblem) -> np.ndarray:
    """Closed-form DLE solution for symmetric ``A`` in the eigenbasis of ``A``.

    With ``A = V diag(lam) V^T`` and ``L_ij = lam_i + lam_j``:
    ``X(t) = V (e^{tL} o X0' + (e^{tL} - 1)/L o Q') V^T`` (``o`` elementwise).
    """
    if isinstance(p, DREProblem):
        raise ContractError("eigen_reference solves Lyapunov problems only")
    A = p.A.toarray() if sp.issparse(p.A) else np.asarray(p.A, dtype=float)
    if np.abs(A - A.T).max() > 1e-12 * max(np.abs(A).max(), 1.0):
        raise ContractError("eigen_reference needs a symmetric A")
    lam, V = np.linalg.eigh(A)
    t = p.T - p.t0
    L = lam[:, None] + lam[None, :]
    E = np.exp(t * L)
    with np.errstate(divide="ignore", invalid="ignore"):
        W = np.where(np.abs(L) > 1e-300, np.expm1(t * L) / L, t)
    X0 = V.T @ p.X0.to_dense() @ V
    Qt = V.T @ p.Q.to_dense() @ V
    X = V @ (E * X0 + W * Qt) @ V.T
    return 0.5 * (X + X.T)


def cached_reference(spec: ProblemSpec, cache_dir=None, kind: str = "dopri5",
                     rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """Reference at ``T`` for ``spec``; stored under ``cache_dir`` keyed by the problem hash."""
    path = None
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        path = Path(cache_dir) / f"ref-{spec.digest()}-{kind}.bin"
        if path.exists():
            return read_reference(path)
    p = spec.build()
    if kind == "dopri5":
        X = dopri5_reference(p, rtol, atol)
    elif kind == "exact":
        X = eigen_reference(p)
    else:
        X = read_reference(kind)
    if path is not None:
        write_reference(path, X)
    return X


# --------------------------------------------------------------------------- plans


@dataclass
class ExperimentPlan:
    """Sweep over ``methods x ranks x nsteps`` for one problem.

    ``reference`` is ``"dopri5"``, ``"exact"`` (symmetric DLEs only) or a path to a
    reference binary.
    """

    problem: ProblemSpec
    methods: list[str]
    ranks: list[int]
    nsteps: list[int]
    reference: str = "dopri5"
    out_dir: str | None = None
    cache_dir: str | None = None
    expmv_tol: float = 1e-12
    kpik_tol: float = 1e-10
    kpik_toly: float = 1e-12
    workers: int = 1

    def __post_init__(self):
        if not (self.methods and self.ranks and self.nsteps):
            raise ContractError("plan sweeps must be non-empty")
        allowed = DLE_METHODS if self.problem.kind == "dle" else DRE_METHODS
        for m in self.methods:
            if m not in allowed:
                raise ContractError(f"method {m!r} not available for {self.problem.kind} problems")
        if any(n < 1 for n in self.nsteps) or any(r < 1 for r in self.ranks):
            raise ContractError("ranks and nsteps must be positive")

    def cells(self):
        """Plan coordinates in output order; rank-free methods get one cell per nsteps."""
        out = []
        for m in sorted(set(self.methods), key=METHOD_ORDER.get):
            ranks = [0] if m in ("be-kpik", "richardson", "dopri5") else sorted(set(self.ranks))
            steps = sorted(set(self.nsteps))
            if m == "dopri5":
                steps = steps[:1]  # adaptive: the step count is not a parameter
            for r in ranks:
                for n in steps:
                    out.append((m, r, n))
        return out


def run_method(p, method: str, rank: int, nsteps: int, expmv: ExpmvConfig | None = None,
               kpik: KPIKConfig | None = None) -> SolveReport:
    """Single solve dispatched on the method name."""
    if method == "dopri5":
        tic = time.perf_counter()
        X = dopri5_reference(p)
        d = p.dim
        rep = SolveReport("dopri5", d, 0, np.array([p.t0, p.T]), GenLowRank(np.eye(d), X, np.eye(d)))
        rep.add_time("total", time.perf_counter() - tic)
        return rep
    if isinstance(p, DREProblem):
        return solve_dre(p, method, rank, nsteps, expmv)
    if method in ("be-kpik", "richardson"):
        return solve_be_kpik(p, nsteps, kpik, richardson=method == "richardson")
    return solve_dle(p, method, rank, nsteps, expmv)


def _run_cell(args):
    spec_json, method, rank, nsteps, Xref, expmv_tol, kpik_tol, kpik_toly = args
    p = ProblemSpec.from_json(spec_json).build()
    ref_norm = float(np.linalg.norm(Xref))
    row = {"method": method, "rank": rank, "nsteps": nsteps, "error": math.nan,
           "d_sym": math.nan, "d_psd": math.nan, "seconds": math.nan, "status": "ok"}
    try:
        rep = run_method(p, method, rank, nsteps, ExpmvConfig(tol=expmv_tol),
                         KPIKConfig(tol=kpik_tol, tolY=kpik_toly))
    except LowRankError as exc:
        row["status"] = type(exc).__name__
        return row
    if method in ("be-kpik", "richardson"):
        row["rank"] = rep.rank
    row["error"] = error_scaled(rep.final, Xref)
    row["d_sym"] = defect_sym(rep.final, ref_norm)
    row["d_psd"] = defect_psd(rep.final, ref_norm)
    row["seconds"] = rep.seconds
    return row


def _sweep(plan: ExperimentPlan, cells, Xref):
    spec_json = plan.problem.to_json()
    jobs = [(spec_json, m, r, n, Xref, plan.expmv_tol, plan.kpik_tol, plan.kpik_toly)
            for m, r, n in cells]
    if plan.workers > 1:
        with ProcessPoolExecutor(plan.workers) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    return rows


def plan_reference(plan: ExperimentPlan) -> np.ndarray:
    return cached_reference(plan.problem, plan.cache_dir, plan.reference)


def orders_by_series(rows, T: float):
    """Fitted order per (method, rank) over the pre-plateau segment."""
    series = {}
    for row in rows:
        if row["status"] != "ok" or row["method"] == "dopri5":
            continue
        key = row["method"], row.get("series_rank", row["rank"])
        series.setdefault(key, []).append(row)
    out = {}
    for key, rs in series.items():
        steps = [T / r["nsteps"] for r in rs]
        out[key] = fit_order(steps, [r["error"] for r in rs])
    return out


def run_convergence(plan: ExperimentPlan, Xref: np.ndarray | None = None):
    """Run the sweep; return ``(rows, orders)`` and write ``results.csv`` when ``out_dir`` is set."""
    Xref = plan_reference(plan) if Xref is None else Xref
    cells = plan.cells()
    rows = _sweep(plan, cells, Xref)
    for row, (_, r, _) in zip(rows, cells):
        row["series_rank"] = r
    T = plan.problem.T - plan.problem.t0
    orders = orders_by_series(rows, T)
    if plan.out_dir:
        out = Path(plan.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(rows, out / "results.csv")
        write_gnuplot(out / "plot.gp", "results.csv", T)
    return rows, orders


def run_compare(plan: ExperimentPlan, Xref: np.ndarray | None = None):
    """Lie splitting against backward Euler with K-PIK on matched step counts."""
    methods = [m for m in plan.methods if m in ("lie", "be-kpik")] or ["lie", "be-kpik"]
    sub = ExperimentPlan(plan.problem, methods, plan.ranks, plan.nsteps, plan.reference,
                         plan.out_dir, plan.cache_dir, plan.expmv_tol, plan.kpik_tol,
                         plan.kpik_toly, plan.workers)
    return run_convergence(sub, Xref)


# --------------------------------------------------------------------------- output


def write_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([
                r["method"], int(r["rank"]), int(r["nsteps"]),
                *("%.16e" % float(r[k]) for k in ("error", "d_sym", "d_psd", "seconds")),
                r["status"],
            ])


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["rank"] = int(r["rank"])
        r["nsteps"] = int(r["nsteps"])
        for k in ("error", "d_sym", "d_psd", "seconds"):
            r[k] = float(r[k])
    return rows


def write_gnuplot(path, csv_name: str, T: float) -> None:
    """Log-log error against step size, one curve per method and rank."""
    script = f"""# error vs step size; run: gnuplot {os.path.basename(str(path))}
set datafile separator ','
set logscale xy
set xlabel 'step size'
set ylabel 'error (scaled Frobenius)'
set key outside right
set terminal pngcairo size 900,600
set output 'errors.png'
T = {T!r}
plot for [key in system("tail -n +2 {csv_name} | cut -d, -f1,2 | sort -u | tr '\\n' ' '")] \\
    '{csv_name}' using (strcol(1).','.strcol(2) eq key ? T/$3 : 1/0):4 \\
    with linespoints title key
"""
    Path(path).write_text(script, encoding="utf-8")
