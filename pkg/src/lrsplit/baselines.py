"""Reference and comparison solvers.

* :func:`dopri5_dense` -- adaptive Dormand-Prince 5(4) on dense matrix ODEs;
* :func:`kpik_ale_solve` -- extended Krylov (K-PIK) solver for ``0 = A X + X A^T + B B^T``;
* :func:`be_kpik_dle_step` / :func:`solve_be_kpik` -- backward Euler for DLEs with
  one K-PIK solve per step, optionally Richardson-extrapolated (:func:`richardson2`).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractError, DivergenceError, SingularError, StiffnessError
from .lyapunov import DLEProblem
from .matcore import SymLowRank, _fix_signs, kron_lyap_solve, lyap_solve, qr_thin
from .report import SolveReport

# --------------------------------------------------------------------------- DOPRI5

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# difference between the 5th order solution and the embedded 4th order one
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


@dataclass
class Dopri5Stats:
    accepted: int = 0
    rejected: int = 0
    evaluations: int = 0


def _initial_step(rhs, t0, X0, f0, rtol, atol, span):
    sc = atol + rtol * np.abs(X0)
    d0 = np.sqrt(np.mean((X0 / sc) ** 2))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    X1 = X0 + h0 * f0
    f1 = rhs(t0 + h0, X1)
    d2 = np.sqrt(np.mean(((f1 - f0) / sc) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def dopri5_dense(rhs: Callable, X0, t0: float, T: float, rtol: float = 1e-10,
                 atol: float = 1e-12, max_steps: int = 10_000_000, stats: Dopri5Stats | None = None):
    """Integrate ``X' = rhs(t, X)`` from ``t0`` to ``T`` (arrays of any shape).

    Step size control is the PI controller of Hairer & Wanner (beta = 0.04).
    """
    X = np.array(X0, dtype=float, copy=True)
    span = T - t0
    if span < 0:
        raise ContractError("T must not precede t0")
    if span == 0:
        return X
    stats = stats if stats is not None else Dopri5Stats()
    safe, beta = 0.9, 0.04
    expo = 0.2 - 0.75 * beta
    facmin, facmax = 0.2, 10.0
    t = t0
    k1 = rhs(t, X)
    stats.evaluations += 1
    h = _initial_step(rhs, t, X, k1, rtol, atol, span)
    stats.evaluations += 1
    errold = 1e-4
    rejected_last = False
    for _ in range(max_steps):
        if t + 1.01 * h >= T:
            h = T - t
        if h <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise StiffnessError(f"step size underflow at t={t:.6g} (h={h:.3g})")
        ks = [k1]
        for i in range(1, 7):
            Xi = X + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
            ks.append(rhs(t + _C[i] * h, Xi))
        stats.evaluations += 6
        Xnew = Xi  # stage 7 is evaluated at the 5th order solution (FSAL)
        errvec = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        sc = atol + rtol * np.maximum(np.abs(X), np.abs(Xnew))
        err = float(np.sqrt(np.mean((errvec / sc) ** 2)))
        if not np.isfinite(err):
            err = 1e10
        if err <= 1.0:
            fac = err**expo / errold**beta if err > 0 else 0.0
            fac = min(1.0 / facmin, max(1.0 / facmax, fac / safe))
            t_new = t + h
            X, k1 = Xnew, ks[6]
            stats.accepted += 1
            errold = max(err, 1e-4)
            if t_new >= T or abs(T - t_new) <= 1e-14 * max(abs(T), 1.0):
                return X
            t = t_new
            hnew = h / fac
            if rejected_last:
                hnew = min(hnew, h)
            rejected_last = False
            h = hnew
        else:
            stats.rejected += 1
            h = h / min(1.0 / facmin, err**expo / safe)
            rejected_last = True
    raise DivergenceError(f"dopri5 exceeded {max_steps} steps", residual=float("nan"))


def dle_rhs(A, Q):
    """Right-hand side ``A X + X A^T + Q`` for dense states."""
    Qd = Q.to_dense() if isinstance(Q, SymLowRank) else np.asarray(Q, dtype=float)

    def rhs(t, X):
        AX = A @ X
        return AX + AX.T + Qd

    return rhs


def dre_rhs(A, Q, P):
    """Right-hand side ``A X + X A^T + Q - X P X`` with ``P`` used in factored form."""
    Qd = Q.to_dense() if isinstance(Q, SymLowRank) else np.asarray(Q, dtype=float)
    FP = P.factor() if isinstance(P, SymLowRank) else None
    Pd = None if FP is not None else np.asarray(P, dtype=float)

    def rhs(t, X):
        AX = A @ X
        out = AX + AX.T + Qd
        if FP is not None:
            XF = X @ FP
            return out - XF @ (FP.T @ X)
        return out - X @ Pd @ X

    return rhs


# --------------------------------------------------------------------------- K-PIK


@dataclass(frozen=True)
class KPIKConfig:
    """Stopping tolerance ``tol``, eigenvalue cut-off ``tolY``, iteration cap ``max_iter``."""

    tol: float = 1e-10
    tolY: float = 1e-12
    max_iter: int = 100
    max_basis: int | None = None

    def __post_init__(self):
        if not (0 < self.tol < 1 and 0 < self.tolY < 1):
            raise ContractError("tol and tolY must lie in (0, 1)")
        if self.max_iter < 1:
            raise ContractError("max_iter must be >= 1")


@dataclass
class LowRankFactor:
    """``X = Z Z^T`` plus solver diagnostics."""

    Z: np.ndarray
    iterations: int = 0
    residual: float = float("nan")
    basis_size: int = 0

    @property
    def rank(self) -> int:
        return self.Z.shape[1]

    def to_dense(self) -> np.ndarray:
        return self.Z @ self.Z.T


class InverseOperator:
    """Sparse LU of a square operator, computed once and reused."""

    def __init__(self, A):
        try:
            self._lu = spla.splu(sp.csc_matrix(A))
        except RuntimeError as exc:
            raise SingularError(f"sparse LU failed: {exc}") from exc

    def __call__(self, W):
        out = self._lu.solve(np.asarray(W, dtype=float))
        if not np.all(np.isfinite(out)):
            raise SingularError("sparse solve produced non-finite values")
        return out


def _compress_columns(B):
    """Factor with the same ``B B^T`` and linearly independent columns."""
    if B.shape[1] == 0:
        return B
    Qb, Rb = np.linalg.qr(B)
    u, s, _ = np.linalg.svd(Rb)
    keep = s > max(B.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    return Qb @ (u[:, keep] * s[keep])


def _append_block(V, W, drop_tol):
    """Orthonormalize ``W`` against ``V`` and itself; drop directions below ``drop_tol``."""
    if V.shape[1]:
        W = W - V @ (V.T @ W)
        W = W - V @ (V.T @ W)
    if W.shape[1] == 0:
        return W
    u, s, _ = np.linalg.svd(W, full_matrices=False)
    keep = s > drop_tol
    Wn = u[:, keep]
    if V.shape[1] and Wn.shape[1]:
        Wn = Wn - V @ (V.T @ Wn)
        Wn, _ = np.linalg.qr(Wn)
    return Wn


def _residual_norm(V, AV, VB, Y, Atil, B):
    """2-norm of ``Atil X + X Atil^T + B B^T`` for ``X = V Y V^T`` (factored when possible)."""
    d, k = V.shape
    if 2 * k <= d:
        F = np.hstack([V, AV])
        M = np.zeros((2 * k, 2 * k))
        M[:k, :k] = VB @ VB.T
        M[:k, k:] = Y
        M[k:, :k] = Y
        _, Rf = qr_thin(F)
        lam = np.linalg.eigvalsh(Rf @ M @ Rf.T)
        return float(np.max(np.abs(lam)))
    X = V @ Y @ V.T
    AX = Atil @ X
    Rm = AX + AX.T + B @ B.T
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (Rm + Rm.T)))))


def kpik_ale_solve(Atil, Btil: np.ndarray, cfg: KPIKConfig | None = None,
                   inverse: InverseOperator | None = None) -> LowRankFactor:
    """Low-rank solution ``Z Z^T`` of ``0 = Atil X + X Atil^T + Btil Btil^T``.

    The search space is the extended (block) Krylov space generated by
    ``Atil`` and ``Atil^{-1}`` from ``Btil``. Each iteration solves the
    projected equation densely and stops when

        ||R||_2 / (2 ||Atil||_F ||Y||_F + ||Btil||_F^2) <= tol.
    """
    cfg = cfg or KPIKConfig()
    Atil = sp.csr_matrix(Atil)
    d = Atil.shape[0]
    Btil = np.asarray(Btil, dtype=float)
    if Btil.ndim != 2 or Btil.shape[0] != d:
        raise ContractError(f"Btil must have {d} rows")
    B = _compress_columns(Btil)
    if B.shape[1] == 0:
        return LowRankFactor(np.zeros((d, 0)))
    inv = inverse if inverse is not None else InverseOperator(Atil)
    normA = float(sp.linalg.norm(Atil))
    normB2 = float(np.sum(B**2))
    max_basis = cfg.max_basis or d

    drop = 1e-13
    plus = _append_block(np.zeros((d, 0)), B, drop * np.linalg.norm(B))
    V = plus
    minus_raw = inv(B)
    minus = _append_block(V, minus_raw, drop * np.linalg.norm(minus_raw))
    V = np.hstack([V, minus])
    AV = Atil @ V

    res = np.inf
    for it in range(1, cfg.max_iter + 1):
        T = V.T @ AV
        VB = V.T @ B
        Y = lyap_solve(T, VB @ VB.T)
        res = _residual_norm(V, AV, VB, Y, Atil, B) / (2 * normA * np.linalg.norm(Y) + normB2)
        if res <= cfg.tol or V.shape[1] >= d:
            break
        new_plus_raw = Atil @ plus if plus.shape[1] else np.zeros((d, 0))
        new_minus_raw = inv(minus) if minus.shape[1] else np.zeros((d, 0))
        plus = _append_block(V, new_plus_raw, drop * max(np.linalg.norm(new_plus_raw), 1e-300))
        V = np.hstack([V, plus])
        minus = _append_block(V, new_minus_raw, drop * max(np.linalg.norm(new_minus_raw), 1e-300))
        V = np.hstack([V, minus])
        if plus.shape[1] + minus.shape[1] == 0:
            # invariant subspace: the projected solution is exact up to rounding
            break
        if V.shape[1] > max_basis:
            raise DivergenceError(f"K-PIK basis exceeded {max_basis} columns", residual=res)
        AV = np.hstack([AV, Atil @ V[:, AV.shape[1]:]])
    else:
        raise DivergenceError(
            f"K-PIK did not converge in {cfg.max_iter} iterations (residual {res:.3e})",
            residual=res,
        )
    if V.shape[1] > AV.shape[1]:
        AV = np.hstack([AV, Atil @ V[:, AV.shape[1]:]])
    if V.shape[1] != T.shape[0]:
        T = V.T @ AV
        VB = V.T @ B
        Y = lyap_solve(T, VB @ VB.T)
    lam, W = np.linalg.eigh(0.5 * (Y + Y.T))
    order = np.argsort(-lam, kind="stable")
    lam, W = lam[order], W[:, order]
    keep = lam > cfg.tolY
    Z = _fix_signs(V @ (W[:, keep] * np.sqrt(lam[keep])))
    return LowRankFactor(Z, iterations=it, residual=float(res), basis_size=V.shape[1])


# --------------------------------------------------------------------------- backward Euler


class _ShiftedOperators:
    """Cache of ``tau A - I/2`` and its LU per step size."""

    def __init__(self, A):
        self.A = sp.csr_matrix(A)
        self._cache = {}

    def get(self, tau):
        key = float(tau)
        if key not in self._cache:
            Atil = (tau * self.A - 0.5 * sp.identity(self.A.shape[0], format="csr")).tocsr()
            self._cache[key] = (Atil, InverseOperator(Atil))
        return self._cache[key]


def be_kpik_dle_step(p: DLEProblem, Zn: np.ndarray, tau: float, cfg: KPIKConfig | None = None,
                     operators: _ShiftedOperators | None = None, R: np.ndarray | None = None
                     ) -> LowRankFactor:
    """One backward Euler step for the DLE as a K-PIK solve.

    ``0 = (X_n + tau Q) + (tau A - I/2) X + X (tau A - I/2)^T`` with
    ``Btil = [sqrt(tau) R, Z_n]`` where ``Q = R R^T`` and ``X_n = Z_n Z_n^T``.
    """
    operators = operators or _ShiftedOperators(p.A)
    Atil, inv = operators.get(tau)
    R = p.R if R is None else R
    Btil = np.hstack([np.sqrt(tau) * R, np.asarray(Zn, dtype=float)])
    return kpik_ale_solve(Atil, Btil, cfg, inv)


def be_dense_dle_step(A, Xn: np.ndarray, Q: np.ndarray, tau: float) -> np.ndarray:
    """Dense backward Euler step through the Kronecker Lyapunov solve (small d only)."""
    d = A.shape[0]
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    return kron_lyap_solve(tau * Ad - 0.5 * np.eye(d), Xn + tau * Q)


def _pad(Z, k):
    if Z.shape[1] == k:
        return Z
    return np.hstack([Z, np.zeros((Z.shape[0], k - Z.shape[1]))])


def richardson2(step: Callable, Zn: np.ndarray, tau: float, mode: str = "factor",
                tolY: float = 1e-12) -> np.ndarray:
    """Extrapolate one ``tau`` step against two ``tau/2`` steps.

    ``mode="factor"`` forms ``2 Zhat - Ztil`` on the (zero-padded) factors.
    ``mode="matrix"`` extrapolates ``2 Zhat Zhat^T - Ztil Ztil^T`` and refactors it,
    dropping eigenvalues below ``tolY``.
    """
    Zt = step(Zn, tau)
    Zh = step(step(Zn, 0.5 * tau), 0.5 * tau)
    if mode == "factor":
        k = max(Zt.shape[1], Zh.shape[1])
        return 2.0 * _pad(Zh, k) - _pad(Zt, k)
    if mode != "matrix":
        raise ContractError(f"unknown Richardson mode {mode!r}")
    W = np.hstack([Zh, Zt])
    if W.shape[1] == 0:
        return W
    weights = np.concatenate([2.0 * np.ones(Zh.shape[1]), -np.ones(Zt.shape[1])])
    if W.shape[1] > W.shape[0]:
        Xd = (W * weights) @ W.T
        lam, U = np.linalg.eigh(0.5 * (Xd + Xd.T))
    else:
        Qw, Rw = qr_thin(W)
        lam, U = np.linalg.eigh((Rw * weights) @ Rw.T)
        U = Qw @ U
    order = np.argsort(-lam, kind="stable")
    lam, U = lam[order], U[:, order]
    keep = lam > tolY
    return _fix_signs(U[:, keep] * np.sqrt(lam[keep]))


def solve_be_kpik(p: DLEProblem, nsteps: int, cfg: KPIKConfig | None = None,
                  richardson: bool = False, mode: str = "factor") -> SolveReport:
    """Backward Euler (optionally Richardson-extrapolated) with K-PIK solves."""
    if nsteps < 1:
        raise ContractError("nsteps must be >= 1")
    cfg = cfg or KPIKConfig()
    tau = (p.T - p.t0) / nsteps
    times = p.t0 + tau * np.arange(nsteps + 1)
    ops = _ShiftedOperators(p.A)
    R = p.R
    tic = time.perf_counter()

    def step(Z, h):
        return be_kpik_dle_step(p, Z, h, cfg, ops, R).Z

    Z = p.X0.factor()
    method = "richardson" if richardson else "be-kpik"
    ranks = []
    for _ in range(nsteps):
        Z = richardson2(step, Z, tau, mode, cfg.tolY) if richardson else step(Z, tau)
        ranks.append(Z.shape[1])
    final = SymLowRank.from_factor(Z) if Z.shape[1] else SymLowRank.zeros(p.dim, 0)
    report = SolveReport(method, ranks[-1], nsteps, times, final, ranks=ranks)
    report.add_time("total", time.perf_counter() - tic)
    return report
