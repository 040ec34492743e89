"""Dense and low-rank linear algebra kernels.

Everything above this module works on two factored representations:

* :class:`GenLowRank` -- ``Y = U S V^T`` with orthonormal ``U`` and ``V``;
* :class:`SymLowRank` -- ``Y = U S U^T`` with orthonormal ``U`` and symmetric ``S``.

Sparse operators are plain ``scipy.sparse`` matrices (CSR preferred).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ContractError, RefusalError, SingularError

EXPM_DENSE_LIMIT = 2000
KRON_LYAP_LIMIT = 80

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class GenLowRank:
    """General rank-r factorization ``U @ S @ V.T``."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        d, r = self.U.shape
        if self.V.shape != (d, r) or self.S.shape != (r, r):
            raise ContractError(
                f"inconsistent factor shapes U{self.U.shape} S{self.S.shape} V{self.V.shape}"
            )

    @property
    def dim(self) -> int:
        return self.U.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def to_dense(self) -> np.ndarray:
        return (self.U @ self.S) @ self.V.T


@dataclass(frozen=True)
class SymLowRank:
    """Symmetric rank-r factorization ``U @ S @ U.T``."""

    U: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        d, r = self.U.shape
        if self.S.shape != (r, r):
            raise ContractError(f"inconsistent factor shapes U{self.U.shape} S{self.S.shape}")

    @property
    def dim(self) -> int:
        return self.U.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def to_dense(self) -> np.ndarray:
        return (self.U @ self.S) @ self.U.T

    def as_general(self) -> GenLowRank:
        return GenLowRank(self.U, self.S, self.U)

    def factor(self) -> np.ndarray:
        """Return ``R`` with ``R @ R.T == U S U^T``; negative eigenvalues of S are dropped."""
        lam, W = np.linalg.eigh(0.5 * (self.S + self.S.T))
        keep = lam > 0
        return self.U @ (W[:, keep] * np.sqrt(lam[keep]))

    def truncate(self, r: int) -> "SymLowRank":
        """Best symmetric rank-r representation; pads the basis when ``r > rank``."""
        k = self.rank
        if r > self.dim:
            raise ContractError(f"rank {r} exceeds dimension {self.dim}")
        lam, W = np.linalg.eigh(0.5 * (self.S + self.S.T))
        order = np.argsort(-np.abs(lam), kind="stable")
        lam, W = lam[order], W[:, order]
        if r <= k:
            U = _fix_signs(self.U @ W[:, :r])
            return SymLowRank(U, np.diag(lam[:r]))
        U = complete_basis(self.U @ W, r)
        S = np.zeros((r, r))
        S[:k, :k] = np.diag(lam)
        return SymLowRank(U, S)

    @classmethod
    def zeros(cls, d: int, r: int = 0) -> "SymLowRank":
        return cls(complete_basis(np.zeros((d, 0)), r), np.zeros((r, r)))

    @classmethod
    def from_factor(cls, Z: np.ndarray) -> "SymLowRank":
        """Orthonormalize ``Z`` so that ``Z Z^T = U S U^T`` (S diagonal)."""
        Q, R = qr_thin(np.asarray(Z, dtype=float))
        lam, W = np.linalg.eigh(R @ R.T)
        order = np.argsort(-lam, kind="stable")
        return SymLowRank(_fix_signs(Q @ W[:, order]), np.diag(lam[order]))


def as_dense(A) -> np.ndarray:
    """Densify a sparse operator, a factorization or an array."""
    if isinstance(A, (GenLowRank, SymLowRank)):
        return A.to_dense()
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float)


def _fix_signs(U: np.ndarray) -> np.ndarray:
    # gauge: the entry of largest magnitude in every column is positive
    if U.size == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s


def _orthogonalize(v: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Project ``v`` onto the orthogonal complement of ``Q`` (DGKS re-orthogonalization)."""
    if Q.shape[1] == 0:
        return v
    nrm = np.linalg.norm(v)
    for _ in range(3):
        v = v - Q @ (Q.T @ v)
        new = np.linalg.norm(v)
        if new > 0.7071 * nrm:
            break
        nrm = new
    return v


def complete_basis(Q: np.ndarray, r: int) -> np.ndarray:
    """Extend orthonormal columns ``Q`` to width ``r`` with canonical-vector Gram-Schmidt."""
    d, k = Q.shape
    if r > d:
        raise ContractError(f"cannot build {r} orthonormal columns in dimension {d}")
    out = np.zeros((d, r))
    out[:, :k] = Q[:, :r] if k > r else Q
    j = k
    for e_idx in range(d):
        if j >= r:
            break
        e = np.zeros(d)
        e[e_idx] = 1.0
        v = _orthogonalize(e, out[:, :j])
        nv = np.linalg.norm(v)
        if nv > 0.5:
            out[:, j] = v / nv
            j += 1
    return out


def qr_thin(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with nonnegative ``diag(R)``.

    Columns that are (numerically) dependent on their predecessors get a zero
    diagonal entry in ``R`` and a deterministic orthonormal replacement in ``Q``,
    so ``Q`` always has orthonormal columns.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ContractError("qr_thin expects a matrix")
    d, r = M.shape
    if r > d:
        raise ContractError(f"qr_thin needs r <= d, got {M.shape}")
    Q = np.zeros((d, r))
    R = np.zeros((r, r))
    thresh = 8.0 * _EPS * max(1.0, np.sqrt(d)) * np.linalg.norm(M)
    deficient = []
    for j in range(r):
        col = M[:, j]
        v = _orthogonalize(col, Q[:, :j])
        # coefficients from the original column keep M = QR exact to rounding
        R[:j, j] = Q[:, :j].T @ col
        nv = np.linalg.norm(v)
        if nv <= thresh or nv == 0.0:
            deficient.append(j)
            Q[:, j] = complete_basis(Q[:, :j], j + 1)[:, j]
            R[j, j] = 0.0
        else:
            Q[:, j] = v / nv
            R[j, j] = Q[:, j] @ col
            if R[j, j] < 0:
                Q[:, j] = -Q[:, j]
                R[j, j] = -R[j, j]
    return Q, R


def svd_truncate(M: np.ndarray, r: int) -> GenLowRank:
    """Best rank-r approximation in the Frobenius norm."""
    M = np.asarray(M, dtype=float)
    if r < 0 or r > min(M.shape):
        raise ContractError(f"rank {r} invalid for shape {M.shape}")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    U, V = U[:, :r], Vt[:r].T
    # align the gauge of U and V column by column
    idx = np.argmax(np.abs(U), axis=0) if r else np.zeros(0, dtype=int)
    sgn = np.sign(U[idx, np.arange(r)])
    sgn[sgn == 0] = 1.0
    return GenLowRank(U * sgn, np.diag(s[:r]), V * sgn)


def sym_truncate(M, r: int) -> SymLowRank:
    """Best symmetric rank-r approximation (largest ``|lambda|`` eigenpairs).

    ``M`` may be a dense symmetric array or a :class:`SymLowRank`.
    """
    if isinstance(M, SymLowRank):
        return M.truncate(r)
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractError("sym_truncate expects a square matrix")
    if r < 0 or r > M.shape[0]:
        raise ContractError(f"rank {r} invalid for dimension {M.shape[0]}")
    nrm = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > 1e-10 * nrm:
        raise ContractError("sym_truncate expects a symmetric matrix")
    lam, W = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(-np.abs(lam), kind="stable")[:r]
    return SymLowRank(_fix_signs(W[:, order]), np.diag(lam[order]))


def expm_dense(M) -> np.ndarray:
    """Dense matrix exponential (scaling and squaring); refuses large inputs."""
    M = as_dense(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractError("expm_dense expects a square matrix")
    if M.shape[0] > EXPM_DENSE_LIMIT:
        raise RefusalError(
            f"dimension {M.shape[0]} > {EXPM_DENSE_LIMIT}; use lrsplit.expmv.expm_action"
        )
    return sla.expm(M)


def kron_lyap_solve(A, C) -> np.ndarray:
    """Solve ``0 = A X + X A^T + C`` through the vectorized Kronecker system."""
    A = as_dense(A)
    C = as_dense(C)
    m = A.shape[0]
    if A.shape != (m, m) or C.shape != (m, m):
        raise ContractError(f"shape mismatch A{A.shape} C{C.shape}")
    if m > KRON_LYAP_LIMIT:
        raise RefusalError(f"Kronecker solve limited to m <= {KRON_LYAP_LIMIT}, got {m}")
    I = np.eye(m)
    K = np.kron(I, A) + np.kron(A, I)
    rhs = -C.reshape(-1, order="F")
    with warnings.catch_warnings(), np.errstate(all="ignore"):
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            x = sla.solve(K, rhs)
        except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
            raise SingularError(f"Kronecker Lyapunov system is singular: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularError("Kronecker Lyapunov system is singular")
    X = x.reshape(m, m, order="F")
    return 0.5 * (X + X.T)


def lyap_solve(A, C) -> np.ndarray:
    """Dense ALE solve: Kronecker system for small ``m``, Bartels-Stewart beyond."""
    A = as_dense(A)
    if A.shape[0] <= KRON_LYAP_LIMIT:
        return kron_lyap_solve(A, C)
    X = sla.solve_continuous_lyapunov(A, -as_dense(C))
    if not np.all(np.isfinite(X)):
        raise SingularError("Bartels-Stewart solve produced non-finite values")
    return 0.5 * (X + X.T)
