"""Error and structure metrics: scaled Frobenius norm, symmetry and PSD defects, order fits."""

from __future__ import annotations

import numpy as np

from .matcore import GenLowRank, SymLowRank, qr_thin

#: factorizations up to this dimension are densified before measuring defects,
#: so that the reported numbers include the rounding of the reconstruction
DENSE_METRIC_LIMIT = 4000


def _fro_factored(Y) -> float:
    if isinstance(Y, SymLowRank):
        # U need not be exactly orthonormal: ||U S U^T||^2 = tr(S G S G), G = U^T U
        G = Y.U.T @ Y.U
        return float(np.sqrt(max(np.trace(Y.S @ G @ Y.S.T @ G), 0.0)))
    G1 = Y.U.T @ Y.U
    G2 = Y.V.T @ Y.V
    return float(np.sqrt(max(np.trace(Y.S.T @ G1 @ Y.S @ G2), 0.0)))


def fro_norm(Y) -> float:
    """Plain Frobenius norm of a dense matrix or a factorization."""
    if isinstance(Y, (SymLowRank, GenLowRank)):
        return _fro_factored(Y)
    return float(np.linalg.norm(Y))


def scaled_fro_norm(Y) -> float:
    """``(1/d) * sqrt(sum Y_ij^2)``; factorizations are not densified."""
    if isinstance(Y, (SymLowRank, GenLowRank)):
        d = Y.dim
        return _fro_factored(Y) / d if d else 0.0
    Y = np.asarray(Y, dtype=float)
    d = Y.shape[0]
    return float(np.linalg.norm(Y)) / d if d else 0.0


def _small_core(Y):
    """Return ``M`` with ``Y = W M W^T`` for an orthonormal ``W`` (factored)."""
    if isinstance(Y, SymLowRank):
        W, R = qr_thin(Y.U)
        return R @ Y.S @ R.T
    d, r = Y.U.shape
    if 2 * r > d:
        return Y.to_dense()
    W, R = qr_thin(np.hstack([Y.U, Y.V]))
    return R[:, :r] @ Y.S @ R[:, r:].T


def _want_dense(Y, dense):
    if not isinstance(Y, (SymLowRank, GenLowRank)):
        return True
    if dense == "auto":
        return Y.dim <= DENSE_METRIC_LIMIT
    return bool(dense)


def nearest_psd(Y: np.ndarray) -> np.ndarray:
    """Nearest symmetric positive semidefinite matrix in the Frobenius norm."""
    H = 0.5 * (Y + Y.T)
    lam, V = np.linalg.eigh(H)
    return (V * np.maximum(lam, 0.0)) @ V.T


def sym_defect_abs(Y, dense="auto") -> float:
    """``||Y - Y^T||_F``."""
    if _want_dense(Y, dense):
        M = Y.to_dense() if isinstance(Y, (SymLowRank, GenLowRank)) else np.asarray(Y, float)
    else:
        M = _small_core(Y)
    return float(np.linalg.norm(M - M.T))


def psd_defect_abs(Y, dense="auto") -> float:
    """``||Y - nearest_psd(Y)||_F``."""
    if _want_dense(Y, dense):
        M = Y.to_dense() if isinstance(Y, (SymLowRank, GenLowRank)) else np.asarray(Y, float)
    else:
        M = _small_core(Y)
    # ||Y - Yhat||^2 = ||skew part||^2 + ||negative eigenvalues of the symmetric part||^2
    skew = 0.5 * (M - M.T)
    lam = np.linalg.eigvalsh(0.5 * (M + M.T))
    return float(np.sqrt(np.sum(skew**2) + np.sum(np.minimum(lam, 0.0) ** 2)))


def defect_sym(Y, ref_norm: float, dense="auto") -> float:
    """Symmetry defect ``||Y - Y^T||_F / ||Y_ref||_F``."""
    if not ref_norm > 0:
        raise ValueError("reference norm must be positive")
    return sym_defect_abs(Y, dense) / ref_norm


def defect_psd(Y, ref_norm: float, dense="auto") -> float:
    """PSD defect ``||Y - Yhat||_F / ||Y_ref||_F`` with Yhat the nearest PSD matrix."""
    if not ref_norm > 0:
        raise ValueError("reference norm must be positive")
    return psd_defect_abs(Y, dense) / ref_norm


def error_scaled(Y, Yref: np.ndarray) -> float:
    """Scaled Frobenius distance between an approximation and a dense reference."""
    Yd = Y.to_dense() if isinstance(Y, (SymLowRank, GenLowRank)) else np.asarray(Y, float)
    return scaled_fro_norm(Yd - Yref)


def fit_order(steps, errors, min_ratio: float = 1.5, min_points: int = 3):
    """Least-squares convergence order over the longest pre-plateau segment.

    A pair of consecutive step sizes belongs to the segment when the error
    drops by at least ``min_ratio`` per halving of the step. Returns
    ``(order, used)`` where ``used`` lists the input indices of the fitted
    points, or ``(nan, [])`` when no segment of ``min_points`` points exists.
    """
    h = np.asarray(steps, dtype=float)
    e = np.asarray(errors, dtype=float)
    order = np.argsort(-h)
    h, e = h[order], e[order]
    ok = []
    for i in range(len(h) - 1):
        good = e[i] > 0 and e[i + 1] > 0 and np.isfinite(e[i]) and np.isfinite(e[i + 1])
        if good:
            halvings = np.log2(h[i] / h[i + 1])
            good = halvings > 0 and (e[i] / e[i + 1]) ** (1.0 / halvings) >= min_ratio
        ok.append(good)
    best = None
    i = 0
    while i < len(ok):
        if ok[i]:
            j = i
            while j < len(ok) and ok[j]:
                j += 1
            seg = (i, j)  # points i..j inclusive
            if best is None or (seg[1] - seg[0]) > (best[1] - best[0]):
                best = seg
            i = j
        else:
            i += 1
    if best is None or best[1] - best[0] + 1 < min_points:
        return float("nan"), []
    sl = slice(best[0], best[1] + 1)
    p = np.polyfit(np.log(h[sl]), np.log(e[sl]), 1)[0]
    return float(p), [int(k) for k in order[sl]]
