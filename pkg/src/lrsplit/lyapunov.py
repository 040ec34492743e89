"""Low-rank split-step integrators for ``X' = A X + X A^T + Q``.

The stiff linear flow is applied exactly (up to the expmv tolerance) to the
basis, and the constant inhomogeneity is added by a symmetric variant of the
projector-splitting step whose substeps are affine and therefore solved
exactly. ``S`` stays symmetric positive semidefinite by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .dlr import EXACT_AFFINE, Constant, ksl_step, ksl_step_sym
from .errors import ContractError
from .expmv import ExpmvConfig, expm_action, propagate_linear_flow
from .matcore import GenLowRank, SymLowRank, qr_thin, sym_truncate
from .metrics import psd_defect_abs, sym_defect_abs
from .report import SolveReport

Method = Literal["lie", "strang", "nonsym-lie"]


@dataclass
class DLEProblem:
    """Differential Lyapunov equation on ``[t0, T]`` with PSD ``Q`` and ``X0``."""

    A: sp.spmatrix
    Q: SymLowRank
    X0: SymLowRank
    t0: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        d = self.A.shape[0]
        if self.A.shape != (d, d):
            raise ContractError("A must be square")
        if self.Q.dim != d or self.X0.dim != d:
            raise ContractError("Q and X0 must match the dimension of A")
        if not self.T > self.t0:
            raise ContractError("T must exceed t0")
        for name, F in (("Q", self.Q), ("X0", self.X0)):
            if F.rank:
                lam = np.linalg.eigvalsh(0.5 * (F.S + F.S.T))
                if lam.min() < -1e-12 * max(1.0, np.abs(lam).max()):
                    raise ContractError(f"{name} must be positive semidefinite")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def R(self) -> np.ndarray:
        """Low-rank factor with ``Q = R R^T``."""
        return self.Q.factor()


def lie_step_dle(p: DLEProblem, Y: SymLowRank, tn: float, tau: float,
                 cfg: ExpmvConfig | None = None, symmetrize: bool = True) -> SymLowRank:
    """One step of the first-order symmetric low-rank splitting."""
    YA = propagate_linear_flow(p.A, tau, Y, cfg)
    return ksl_step_sym(Constant(p.Q), YA, tn, tau, EXACT_AFFINE, symmetrize=symmetrize)


def strang_step_dle(p: DLEProblem, Y: SymLowRank, tn: float, tau: float,
                    cfg: ExpmvConfig | None = None, symmetrize: bool = True) -> SymLowRank:
    """Half linear flow, full projector-splitting step, half linear flow."""
    Y = propagate_linear_flow(p.A, 0.5 * tau, Y, cfg)
    Y = ksl_step_sym(Constant(p.Q), Y, tn, tau, EXACT_AFFINE, symmetrize=symmetrize)
    return propagate_linear_flow(p.A, 0.5 * tau, Y, cfg)


def nonsym_lie_step_dle(p: DLEProblem, Y: GenLowRank, tn: float, tau: float,
                        cfg: ExpmvConfig | None = None) -> GenLowRank:
    """Lie splitting with the unmodified projector-splitting step (U and V tracked apart)."""
    U, Ru = qr_thin(expm_action(p.A, tau, Y.U, cfg))
    V, Rv = qr_thin(expm_action(p.A, tau, Y.V, cfg))
    YA = GenLowRank(U, Ru @ Y.S @ Rv.T, V)
    return ksl_step(Constant(p.Q), YA, tn, tau, EXACT_AFFINE)


def initial_value(X0: SymLowRank, rank: int) -> SymLowRank:
    """Symmetric rank-``rank`` start value; the basis is padded when X0 has lower rank."""
    return sym_truncate(X0, rank)


def solve_dle(p: DLEProblem, method: Method = "lie", rank: int = 10, nsteps: int = 1,
              cfg: ExpmvConfig | None = None, track_defects: bool = False,
              symmetrize: bool = True) -> SolveReport:
    """Integrate the DLE on a uniform grid with ``nsteps`` steps at fixed rank."""
    if nsteps < 1:
        raise ContractError("nsteps must be >= 1")
    if rank < 1 or rank > p.dim:
        raise ContractError(f"rank {rank} not in [1, {p.dim}]")
    cfg = cfg or ExpmvConfig()
    tau = (p.T - p.t0) / nsteps
    times = p.t0 + tau * np.arange(nsteps + 1)
    tic = time.perf_counter()
    Y = initial_value(p.X0, rank)
    if method == "nonsym-lie":
        Y = Y.as_general()
    report = SolveReport(method, rank, nsteps, times, Y)
    for n in range(nsteps):
        tn = times[n]
        if method == "lie":
            Y = lie_step_dle(p, Y, tn, tau, cfg, symmetrize)
        elif method == "strang":
            Y = strang_step_dle(p, Y, tn, tau, cfg, symmetrize)
        elif method == "nonsym-lie":
            Y = nonsym_lie_step_dle(p, Y, tn, tau, cfg)
        else:
            raise ContractError(f"unknown DLE method {method!r}")
        report.ranks.append(Y.rank)
        if track_defects:
            report.sym_defect.append(sym_defect_abs(Y, dense=False))
            report.psd_defect.append(psd_defect_abs(Y, dense=False))
    report.final = Y
    report.add_time("total", time.perf_counter() - tic)
    return report
