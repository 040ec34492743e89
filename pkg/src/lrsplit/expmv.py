"""Action of the matrix exponential on skinny matrices by real Leja interpolation.

``exp(tau*A) @ U`` is approximated by Newton interpolation of ``exp`` at Leja
points of a real interval that contains the (Gershgorin) spectrum of ``A``.
Long time steps are split into substeps so that the interpolation degree
stays bounded.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ContractError, DivergenceError
from .matcore import SymLowRank, expm_dense, qr_thin

SINGLE_PRECISION = 2.0**-24
DENSE_FALLBACK_LIMIT = 400


@dataclass(frozen=True)
class SpectralBox:
    """Rectangle ``[alpha, beta] x [-gamma, gamma]`` enclosing the spectrum."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not self.alpha <= self.beta:
            raise ContractError(f"alpha={self.alpha} > beta={self.beta}")
        if self.gamma < 0:
            raise ContractError(f"gamma={self.gamma} < 0")


@dataclass(frozen=True)
class ExpmvConfig:
    """Accuracy and effort limits for :func:`expm_action`.

    ``method="dense"`` switches to ``expm_dense`` (only for ``d <= 400``); it is
    meant for isolating splitting errors from interpolation errors.
    """

    tol: float = SINGLE_PRECISION
    max_degree: int = 100
    max_substeps: int = 4096
    method: str = "leja"

    def __post_init__(self):
        if not self.tol > 0:
            raise ContractError("tol must be positive")
        if self.max_degree < 1:
            raise ContractError("max_degree must be >= 1")
        if self.method not in ("leja", "dense"):
            raise ContractError(f"unknown expmv method {self.method!r}")


def estimate_spectrum(A) -> SpectralBox:
    """Gershgorin bounding box of a sparse (or dense) square operator."""
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ContractError(f"operator must be square, got {A.shape}")
    if A.shape[0] == 0:
        return SpectralBox(0.0, 0.0, 0.0)
    diag = A.diagonal()
    radius = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    radius = np.maximum(radius, 0.0)
    return SpectralBox(
        float(np.min(diag - radius)),
        float(np.max(diag + radius)),
        float(np.max(radius)),
    )


@lru_cache(maxsize=None)
def leja_points(n: int) -> np.ndarray:
    """First ``n`` real Leja points of ``[-2, 2]`` (starting at 2), greedy on a fine grid."""
    grid = np.linspace(-2.0, 2.0, 200001)
    pts = [2.0]
    logdist = np.log(np.abs(grid - 2.0) + 1e-300)
    for _ in range(1, n):
        k = int(np.argmax(logdist))
        pts.append(float(grid[k]))
        logdist += np.log(np.abs(grid - grid[k]) + 1e-300)
    return np.array(pts)


@lru_cache(maxsize=256)
def _divided_differences(h: float, n: int) -> np.ndarray:
    # Opitz: first column of exp(h*Z), Z lower bidiagonal with the nodes on the diagonal
    xi = leja_points(n)
    Z = np.diag(xi) + np.diag(np.ones(n - 1), -1)
    return sla.expm(h * Z)[:, 0].copy()


def _leja_substep(Aop, c, scale, tau, U, cfg):
    """One interpolation on the full ``tau``; returns (result, converged, estimate)."""
    h = tau * scale
    n = cfg.max_degree + 1
    dd = _divided_differences(float(h), n)
    xi = leja_points(n)
    w = U.copy()
    p = dd[0] * w
    prev = np.inf
    est = np.inf
    for k in range(1, n):
        # w <- ((A - c I)/scale - xi_{k-1}) w
        w = (Aop @ w - c * w) / scale - xi[k - 1] * w
        term = dd[k] * w
        p = p + term
        cur = np.linalg.norm(term)
        est = cur + prev
        pn = np.linalg.norm(p)
        if est <= cfg.tol * pn or pn == 0.0:
            return p, True, est
        prev = cur
    return p, False, est / max(np.linalg.norm(p), 1e-300)


def expm_action(A, tau: float, U: np.ndarray, cfg: ExpmvConfig | None = None) -> np.ndarray:
    """Approximate ``exp(tau*A) @ U``."""
    cfg = cfg or ExpmvConfig()
    U = np.asarray(U, dtype=float)
    squeeze = U.ndim == 1
    if squeeze:
        U = U[:, None]
    if A.shape[0] != A.shape[1] or A.shape[1] != U.shape[0]:
        raise ContractError(f"shape mismatch A{A.shape} U{U.shape}")
    if not np.isfinite(tau):
        raise ContractError("tau must be finite")
    if tau == 0.0 or U.size == 0 or (sp.issparse(A) and A.nnz == 0):
        out = U.copy()
        return out[:, 0] if squeeze else out

    if cfg.method == "dense":
        if A.shape[0] > DENSE_FALLBACK_LIMIT:
            raise ContractError("dense expmv fallback limited to d <= 400")
        out = _dense_propagator(A, tau) @ U
        return out[:, 0] if squeeze else out

    box = estimate_spectrum(A)
    if tau < 0:
        # exp(tau A) = exp(|tau| (-A)); mirror the interval
        A = -A
        box = SpectralBox(-box.beta, -box.alpha, box.gamma)
        tau = -tau
    c = 0.5 * (box.alpha + box.beta)
    scale = 0.25 * (box.beta - box.alpha)
    if scale == 0.0:
        # all Gershgorin discs are the point c, hence A = c I
        out = np.exp(tau * c) * U
        return out[:, 0] if squeeze else out

    Aop = sp.csr_matrix(A) if sp.issparse(A) else np.asarray(A, dtype=float)
    # keep h = tau*scale moderate so that the interpolation degree stays bounded
    h_max = max(1.0, cfg.max_degree / 3.0)
    nsub = max(1, int(np.ceil(tau * scale / h_max)))
    out = _advance(Aop, c, scale, tau, nsub, U, cfg)
    return out[:, 0] if squeeze else out


def _advance(Aop, c, scale, tau, nsub, U, cfg, pieces=None):
    # pieces: number of substeps the original tau has been cut into at this level
    pieces = nsub if pieces is None else pieces
    dt = tau / nsub
    damp = np.exp(dt * c)
    w = U
    for _ in range(nsub):
        p, ok, est = _leja_substep(Aop, c, scale, dt, w, cfg)
        if ok:
            w = damp * p
            continue
        if 2 * pieces > cfg.max_substeps:
            raise DivergenceError(
                f"Leja interpolation did not converge with {pieces} substeps", residual=est
            )
        w = _advance(Aop, c, scale, dt, 2, w, cfg, 2 * pieces)
    return w


_DENSE_CACHE: "OrderedDict[tuple[int, float], tuple[object, np.ndarray]]" = OrderedDict()


def _dense_propagator(A, tau):
    key = (id(A), float(tau))
    hit = _DENSE_CACHE.get(key)
    if hit is not None and hit[0] is A:
        return hit[1]
    E = expm_dense(tau * (A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)))
    _DENSE_CACHE[key] = (A, E)
    while len(_DENSE_CACHE) > 16:
        _DENSE_CACHE.popitem(last=False)
    return E


def propagate_linear_flow(A, tau: float, Y: SymLowRank, cfg: ExpmvConfig | None = None) -> SymLowRank:
    """Rank-preserving exact flow of ``M' = A M + M A^T`` on a symmetric factorization."""
    W = expm_action(A, tau, Y.U, cfg)
    U, R = qr_thin(W)
    S = R @ Y.S @ R.T
    return SymLowRank(U, 0.5 * (S + S.T))
