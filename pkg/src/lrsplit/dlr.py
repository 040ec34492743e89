"""Projector-splitting (KSL) integrator for ``N' = G(t, N)`` on the rank-r manifold.

Nonlinearities never form ``G`` densely. Every substep state ``Y`` is passed as
a pair of d x r factors ``(Yl, Yr)`` with ``Y = Yl @ Yr.T``, and a
nonlinearity answers the two products it is asked for::

    right(t, Yl, Yr, W) = G(t, Yl Yr^T) @ W        (d x k)
    left(t, Yl, Yr, W)  = W^T @ G(t, Yl Yr^T)      (k x d)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import BlowUpError, ContractError
from .matcore import GenLowRank, SymLowRank, qr_thin

EXACT_AFFINE = "exact-affine"
RK4 = "rk4"


def _apply(F, W):
    """``F @ W`` for a factorization, sparse or dense matrix."""
    if isinstance(F, SymLowRank):
        return F.U @ (F.S @ (F.U.T @ W))
    if isinstance(F, GenLowRank):
        return F.U @ (F.S @ (F.V.T @ W))
    return F @ W


def _apply_left(F, W):
    """``W.T @ F`` without densifying ``F``."""
    if isinstance(F, SymLowRank):
        return ((W.T @ F.U) @ F.S) @ F.U.T
    if isinstance(F, GenLowRank):
        return ((W.T @ F.U) @ F.S) @ F.V.T
    if sp.issparse(F):
        return (F.T @ W).T
    return W.T @ F


def _sandwich(P, Yr, Yl):
    """``Yr^T P Yl`` (r x r) through the factors of P."""
    if isinstance(P, SymLowRank):
        return ((Yr.T @ P.U) @ P.S) @ (P.U.T @ Yl)
    return Yr.T @ _apply(P, Yl)


class Nonlinearity:
    """Interface of a non-stiff right-hand side ``G(t, Y)``."""

    #: True when G depends neither on t nor on Y (enables exact affine substeps)
    constant = False

    def right(self, t, Yl, Yr, W):
        raise NotImplementedError

    def left(self, t, Yl, Yr, W):
        raise NotImplementedError


@dataclass
class Constant(Nonlinearity):
    """``G(t, X) = Q``."""

    Q: object

    constant = True

    def right(self, t, Yl, Yr, W):
        return _apply(self.Q, W)

    def left(self, t, Yl, Yr, W):
        return _apply_left(self.Q, W)


@dataclass
class Riccati(Nonlinearity):
    """``G(t, X) = Q - X P X`` with symmetric PSD factored ``Q`` and ``P``."""

    Q: SymLowRank
    P: SymLowRank

    @property
    def constant(self):
        return self.P.rank == 0 or not np.any(self.P.S)

    def right(self, t, Yl, Yr, W):
        out = _apply(self.Q, W)
        if self.constant:
            return out
        c = _sandwich(self.P, Yr, Yl)
        return out - Yl @ (c @ (Yr.T @ W))

    def left(self, t, Yl, Yr, W):
        out = _apply_left(self.Q, W)
        if self.constant:
            return out
        c = _sandwich(self.P, Yr, Yl)
        return out - ((W.T @ Yl) @ c) @ Yr.T


@dataclass
class GDRE(Nonlinearity):
    """``G(t, X) = Q + C^T X C - X B Rinv B^T X``.

    No symmetry-preserving fix-up is applied to this nonlinearity.
    """

    Q: SymLowRank
    C: object
    B: np.ndarray
    Rinv: np.ndarray
    P: SymLowRank = field(init=False)

    def __post_init__(self):
        Rinv = np.asarray(self.Rinv, dtype=float)
        lam = np.linalg.eigvalsh(0.5 * (Rinv + Rinv.T))
        if lam.size and lam.min() <= 0:
            raise ContractError("Rinv must be symmetric positive definite")
        L = np.linalg.cholesky(0.5 * (Rinv + Rinv.T))
        self.P = SymLowRank.from_factor(np.asarray(self.B, dtype=float) @ L)

    def right(self, t, Yl, Yr, W):
        CW = self.C @ W
        noise = self.C.T @ (Yl @ (Yr.T @ CW))
        c = _sandwich(self.P, Yr, Yl)
        return _apply(self.Q, W) + noise - Yl @ (c @ (Yr.T @ W))

    def left(self, t, Yl, Yr, W):
        CW = self.C @ W
        noise = ((CW.T @ Yl) @ (self.C.T @ Yr).T)
        c = _sandwich(self.P, Yr, Yl)
        return _apply_left(self.Q, W) + noise - ((W.T @ Yl) @ c) @ Yr.T


@dataclass
class Custom(Nonlinearity):
    """User-supplied products ``right(t, Yl, Yr, W)`` and ``left(t, Yl, Yr, W)``."""

    right_fn: Callable
    left_fn: Callable
    is_constant: bool = False

    @property
    def constant(self):
        return self.is_constant

    def right(self, t, Yl, Yr, W):
        return self.right_fn(t, Yl, Yr, W)

    def left(self, t, Yl, Yr, W):
        return self.left_fn(t, Yl, Yr, W)


def _check_finite(M, t):
    if not np.all(np.isfinite(M)):
        raise BlowUpError(f"non-finite values in inner ODE stage at t={t:.6g}", time=t)


def inner_ode_solve(rhs, M0, t0: float, tau: float, scheme: str = RK4, substeps: int = 1):
    """Integrate ``M' = rhs(t, M)`` from ``t0`` to ``t0 + tau``.

    ``exact-affine`` is exact only for right-hand sides that do not depend on
    ``t`` or ``M``; ``rk4`` is the classical four-stage method.
    """
    if scheme == EXACT_AFFINE:
        return M0 + tau * rhs(t0, M0)
    if scheme != RK4:
        raise ContractError(f"unknown inner scheme {scheme!r}")
    if substeps < 1:
        raise ContractError("substeps must be >= 1")
    h = tau / substeps
    M = M0
    t = t0
    for _ in range(substeps):
        k1 = rhs(t, M)
        _check_finite(k1, t)
        k2 = rhs(t + 0.5 * h, M + 0.5 * h * k1)
        _check_finite(k2, t + 0.5 * h)
        k3 = rhs(t + 0.5 * h, M + 0.5 * h * k2)
        _check_finite(k3, t + 0.5 * h)
        k4 = rhs(t + h, M + h * k3)
        _check_finite(k4, t + h)
        M = M + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t + h
    _check_finite(M, t)
    return M


def _default_scheme(G, scheme):
    if scheme is not None:
        return scheme
    return EXACT_AFFINE if G.constant else RK4


def ksl_step(G: Nonlinearity, Y0: GenLowRank, t0: float, tau: float,
             scheme: str | None = None, substeps: int = 1) -> GenLowRank:
    """One first-order projector-splitting step K -> S -> L (unsymmetric form)."""
    if not tau > 0:
        raise ContractError("tau must be positive")
    scheme = _default_scheme(G, scheme)
    U0, S0, V0 = Y0.U, Y0.S, Y0.V

    K1 = inner_ode_solve(lambda t, K: G.right(t, K, V0, V0), U0 @ S0, t0, tau, scheme, substeps)
    U1, S_hat = qr_thin(K1)

    S_tilde = inner_ode_solve(
        lambda t, S: -(U1.T @ G.right(t, U1 @ S, V0, V0)), S_hat, t0, tau, scheme, substeps
    )

    L1 = inner_ode_solve(
        lambda t, L: G.left(t, U1, L, U1).T, V0 @ S_tilde.T, t0, tau, scheme, substeps
    )
    V1, S1t = qr_thin(L1)
    return GenLowRank(U1, S1t.T, V1)


def ksl_step_sym(G: Nonlinearity, Y0: SymLowRank, t0: float, tau: float,
                 scheme: str | None = None, substeps: int = 1,
                 symmetrize: bool = False) -> SymLowRank:
    """Symmetry-preserving projector-splitting step.

    The left basis is updated in the K-step and reused as the right basis after
    the L-step, so the result stays of the form ``U S U^T``. The L-step carries
    ``L`` as an r x d matrix and returns ``S1 = L(t0 + tau) @ U1``.
    """
    if not tau > 0:
        raise ContractError("tau must be positive")
    scheme = _default_scheme(G, scheme)
    U0, S0 = Y0.U, Y0.S

    K1 = inner_ode_solve(lambda t, K: G.right(t, K, U0, U0), U0 @ S0, t0, tau, scheme, substeps)
    U1, S_hat = qr_thin(K1)

    S_tilde = inner_ode_solve(
        lambda t, S: -(U1.T @ G.right(t, U1 @ S, U0, U0)), S_hat, t0, tau, scheme, substeps
    )

    L1 = inner_ode_solve(
        lambda t, L: G.left(t, U1, L.T, U1), S_tilde @ U0.T, t0, tau, scheme, substeps
    )
    S1 = L1 @ U1
    if symmetrize:
        S1 = 0.5 * (S1 + S1.T)
    return SymLowRank(U1, S1)


def tangent_project(Y: GenLowRank, W: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``W`` onto the tangent space at ``Y``."""
    U, V = Y.U, Y.V
    WV = (W @ V) @ V.T
    return WV - U @ (U.T @ WV) + U @ (U.T @ W)
