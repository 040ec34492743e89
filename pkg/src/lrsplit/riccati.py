"""Low-rank split-step integrators for ``X' = A X + X A^T + Q - X P X``.

Same splitting as for Lyapunov equations, but the projector-splitting
substeps are quadratic and integrated with classical RK4 (one substep of the
outer step size by default). Unlike the Lyapunov case the result is not
exactly symmetric; no fix-up is applied unless ``symmetrize=True``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dlr import RK4, Riccati, ksl_step_sym
from .errors import ContractError
from .expmv import ExpmvConfig, propagate_linear_flow
from .lyapunov import DLEProblem, initial_value
from .matcore import SymLowRank, qr_thin
from .metrics import psd_defect_abs, sym_defect_abs
from .report import SolveReport


@dataclass
class DREProblem:
    """Differential Riccati equation on ``[t0, T]``; Q, P, X0 symmetric PSD and factored."""

    A: sp.spmatrix
    Q: SymLowRank
    P: SymLowRank
    X0: SymLowRank
    t0: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        d = self.A.shape[0]
        if self.A.shape != (d, d):
            raise ContractError("A must be square")
        for name in ("Q", "P", "X0"):
            if getattr(self, name).dim != d:
                raise ContractError(f"{name} must match the dimension of A")
        if not self.T > self.t0:
            raise ContractError("T must exceed t0")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def as_dle(self) -> DLEProblem:
        """The problem with the quadratic term dropped."""
        return DLEProblem(self.A, self.Q, self.X0, self.t0, self.T)


@dataclass
class LQRSpec:
    """Linear-quadratic regulator data: ``x' = A x + B u``, ``y = C x``, weights Qw, Rw."""

    A_sys: sp.spmatrix
    B: np.ndarray
    C: np.ndarray
    Qw: np.ndarray
    Rw: np.ndarray


def _sqrt_psd(M):
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.maximum(lam, 0.0))) @ V.T


def lqr_to_dre(s: LQRSpec, X0: SymLowRank | None = None, t0: float = 0.0,
               T: float = 1.0) -> DREProblem:
    """Riccati data ``A <- A_sys^T``, ``Q <- C^T Qw C``, ``P <- B Rw^{-1} B^T`` in factored form."""
    Rw = np.atleast_2d(np.asarray(s.Rw, dtype=float))
    Qw = np.atleast_2d(np.asarray(s.Qw, dtype=float))
    lam = np.linalg.eigvalsh(0.5 * (Rw + Rw.T))
    if np.linalg.norm(Rw - Rw.T) > 1e-12 * np.linalg.norm(Rw) or lam.min() <= 0:
        raise ContractError("Rw must be symmetric positive definite")
    B = np.asarray(s.B, dtype=float)
    C = np.asarray(s.C, dtype=float)
    d = s.A_sys.shape[0]
    # P = B Rw^{-1} B^T = (B L^{-T})(B L^{-T})^T with Rw = L L^T
    L = np.linalg.cholesky(0.5 * (Rw + Rw.T))
    FP = np.linalg.solve(L, B.T).T
    FQ = C.T @ _sqrt_psd(Qw)
    Q = _compress(FQ, d)
    P = _compress(FP, d)
    X0 = X0 if X0 is not None else SymLowRank.zeros(d, 0)
    return DREProblem(sp.csr_matrix(s.A_sys).T.tocsr(), Q, P, X0, t0, T)


def _compress(F, d):
    if not np.any(F):
        return SymLowRank.zeros(d, 0)
    Y = SymLowRank.from_factor(F)
    keep = np.diag(Y.S) > 0
    return SymLowRank(Y.U[:, keep], Y.S[np.ix_(keep, keep)])


def lie_step_dre(p: DREProblem, Y: SymLowRank, tn: float, tau: float,
                 cfg: ExpmvConfig | None = None, substeps: int = 1,
                 scheme: str | None = None, symmetrize: bool = False) -> SymLowRank:
    """First-order low-rank splitting step; quadratic substeps by RK4."""
    G = Riccati(p.Q, p.P)
    YA = propagate_linear_flow(p.A, tau, Y, cfg)
    return ksl_step_sym(G, YA, tn, tau, scheme or RK4, substeps, symmetrize)


def strang_step_dre(p: DREProblem, Y: SymLowRank, tn: float, tau: float,
                    cfg: ExpmvConfig | None = None, substeps: int = 1,
                    scheme: str | None = None, symmetrize: bool = False) -> SymLowRank:
    G = Riccati(p.Q, p.P)
    Y = propagate_linear_flow(p.A, 0.5 * tau, Y, cfg)
    Y = ksl_step_sym(G, Y, tn, tau, scheme or RK4, substeps, symmetrize)
    return propagate_linear_flow(p.A, 0.5 * tau, Y, cfg)


def solve_dre(p: DREProblem, method: str = "lie", rank: int = 10, nsteps: int = 1,
              cfg: ExpmvConfig | None = None, substeps: int = 1, scheme: str | None = None,
              track_defects: bool = False, symmetrize: bool = False) -> SolveReport:
    """Integrate the DRE on a uniform grid at fixed rank (``method`` is lie or strang)."""
    if nsteps < 1:
        raise ContractError("nsteps must be >= 1")
    if rank < 1 or rank > p.dim:
        raise ContractError(f"rank {rank} not in [1, {p.dim}]")
    if method == "lie":
        step = lie_step_dre
    elif method == "strang":
        step = strang_step_dre
    else:
        raise ContractError(f"unknown DRE method {method!r}")
    cfg = cfg or ExpmvConfig()
    tau = (p.T - p.t0) / nsteps
    times = p.t0 + tau * np.arange(nsteps + 1)
    tic = time.perf_counter()
    Y = initial_value(p.X0, rank)
    report = SolveReport(method, rank, nsteps, times, Y)
    for n in range(nsteps):
        Y = step(p, Y, times[n], tau, cfg, substeps, scheme, symmetrize)
        report.ranks.append(Y.rank)
        if track_defects:
            report.sym_defect.append(sym_defect_abs(Y, dense=False))
            report.psd_defect.append(psd_defect_abs(Y, dense=False))
    report.final = Y
    report.add_time("total", time.perf_counter() - tic)
    return report


def are_residual(p, X) -> float:
    """Scaled Frobenius norm of ``A X + X A^T + Q - X P X``.

    ``p`` is a :class:`DREProblem` or :class:`LQRSpec`; ``X`` a :class:`SymLowRank`
    (evaluated in factored form) or a dense array.
    """
    if isinstance(p, LQRSpec):
        p = lqr_to_dre(p)
    d = p.dim
    if not isinstance(X, SymLowRank):
        X = np.asarray(X, dtype=float)
        Qd = p.Q.to_dense()
        Pd = p.P.to_dense()
        AX = p.A @ X
        return float(np.linalg.norm(AX + AX.T + Qd - X @ Pd @ X)) / d
    U, S = X.U, X.S
    r, rq = U.shape[1], p.Q.rank
    if 2 * r + rq > d:
        return are_residual(p, X.to_dense())
    AU = p.A @ U
    F = np.hstack([AU, U, p.Q.U])
    core = np.zeros((2 * r + rq, 2 * r + rq))
    core[:r, r:2 * r] = S
    core[r:2 * r, :r] = S.T
    PU = p.P.U.T @ U
    core[r:2 * r, r:2 * r] = -S @ (PU.T @ p.P.S @ PU) @ S
    core[2 * r:, 2 * r:] = p.Q.S
    _, Rf = qr_thin(F)
    return float(np.linalg.norm(Rf @ core @ Rf.T)) / d
