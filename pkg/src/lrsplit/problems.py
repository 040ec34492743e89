"""Deterministic builders for the test problems.

Grid convention: ``dtil`` interior points per direction on the unit square,
``h = 1/(dtil+1)``, coordinates ``x_i = (i+1) h``. Unknowns are numbered
lexicographically with x running fastest, i.e. grid point ``(i, j)`` has index
``k = j*dtil + i``. Derivatives in x therefore act through ``kron(I, D)`` and
derivatives in y through ``kron(D, I)``.

Random factors are drawn from numpy's PCG64 bit generator (``Generator(PCG64(seed))``),
uniform on [0, 1) by default or standard normal on request, so that a seed
reproduces the same matrices everywhere.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ContractError
from .expmv import ExpmvConfig, expm_action
from .matcore import SymLowRank


def _grid(dtil: int) -> tuple[float, np.ndarray]:
    if dtil < 2:
        raise ContractError("dtil must be >= 2")
    h = 1.0 / (dtil + 1)
    return h, np.arange(1, dtil + 1) / (dtil + 1)


def _second_difference(dtil: int, h: float) -> sp.csr_matrix:
    e = np.ones(dtil)
    return sp.diags([e[:-1], -2.0 * e, e[:-1]], [-1, 0, 1], format="csr") / h**2


def _centered_difference(dtil: int, h: float) -> sp.csr_matrix:
    e = np.ones(dtil - 1)
    return sp.diags([-e, e], [-1, 1], format="csr") / (2.0 * h)


def build_heat_operator(dtil: int) -> sp.csr_matrix:
    """Five-point Dirichlet Laplacian on the unit square, dimension ``dtil**2``."""
    h, _ = _grid(dtil)
    T = _second_difference(dtil, h)
    I = sp.identity(dtil, format="csr")
    return (sp.kron(T, I) + sp.kron(I, T)).tocsr()


def build_diffadv_operator(dtil: int, cx: float = 10.0, cy: float = 100.0) -> sp.csr_matrix:
    """Centered discretization of ``Lap w - cx*x w_x - cy*y w_y`` with zero Dirichlet data."""
    h, x = _grid(dtil)
    I = sp.identity(dtil, format="csr")
    D = _centered_difference(dtil, h)
    xs = np.tile(x, dtil)
    ys = np.repeat(x, dtil)
    adv = sp.diags(cx * xs) @ sp.kron(I, D) + sp.diags(cy * ys) @ sp.kron(D, I)
    return (build_heat_operator(dtil) - adv).tocsr()


def build_lqr_vectors(dtil: int) -> tuple[np.ndarray, np.ndarray]:
    """Indicator input ``B`` (d x 1) and output ``C`` (1 x d) depending on x only."""
    _, x = _grid(dtil)
    xs = np.tile(x, dtil)
    B = ((xs > 0.1) & (xs <= 0.3)).astype(float)[:, None]
    C = ((xs > 0.7) & (xs <= 0.9)).astype(float)[None, :]
    return B, C


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


DISTRIBUTIONS = ("uniform", "normal")


def random_psd_lowrank(d: int, rank: int, seed: int, distribution: str = "uniform") -> SymLowRank:
    """``Z Z^T`` with a random d x rank factor ``Z``, returned as ``U S U^T``."""
    if rank < 0 or rank > d:
        raise ContractError(f"rank {rank} invalid for dimension {d}")
    if distribution not in DISTRIBUTIONS:
        raise ContractError(f"unknown distribution {distribution!r}")
    if rank == 0:
        return SymLowRank.zeros(d, 0)
    g = rng_from_seed(seed)
    Z = g.random((d, rank)) if distribution == "uniform" else g.standard_normal((d, rank))
    return SymLowRank.from_factor(Z)


def velocity_field(dtil: int, kind: str = "constant", speed: float = 1.0):
    """Synthetic velocity samples ``(ux, uy)`` on the grid."""
    _, x = _grid(dtil)
    xs = np.tile(x, dtil)
    ys = np.repeat(x, dtil)
    if kind == "zero":
        return np.zeros_like(xs), np.zeros_like(ys)
    if kind == "constant":
        return speed * np.ones_like(xs), 0.5 * speed * np.ones_like(ys)
    if kind == "rotational":
        return -speed * (ys - 0.5), speed * (xs - 0.5)
    raise ContractError(f"unknown velocity field {kind!r}")


def build_advection_operator(dtil: int, ux: np.ndarray, uy: np.ndarray,
                             scheme: str = "upwind") -> sp.csr_matrix:
    """Discretization of the transport operator ``w -> -u . grad w`` (zero inflow data)."""
    h, _ = _grid(dtil)
    d = dtil * dtil
    ux = np.asarray(ux, dtype=float)
    uy = np.asarray(uy, dtype=float)
    if ux.shape != (d,) or uy.shape != (d,):
        raise ContractError("velocity samples must have one value per grid point")
    if scheme == "centered":
        I = sp.identity(dtil, format="csr")
        D = _centered_difference(dtil, h)
        return (-(sp.diags(ux) @ sp.kron(I, D)) - sp.diags(uy) @ sp.kron(D, I)).tocsr()
    if scheme != "upwind":
        raise ContractError(f"unknown advection scheme {scheme!r}")
    # x direction: neighbours k +- 1 inside a grid line; y direction: k +- dtil
    rows, cols, vals = [], [], []
    ix = np.tile(np.arange(dtil), dtil)
    iy = np.repeat(np.arange(dtil), dtil)
    k = np.arange(d)
    for u, idx, stride in ((ux, ix, 1), (uy, iy, dtil)):
        rows.append(k)
        cols.append(k)
        vals.append(-np.abs(u) / h)
        pos = (u > 0) & (idx > 0)
        rows.append(k[pos])
        cols.append(k[pos] - stride)
        vals.append(u[pos] / h)
        neg = (u < 0) & (idx < dtil - 1)
        rows.append(k[neg])
        cols.append(k[neg] + stride)
        vals.append(-u[neg] / h)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(d, d)
    ).tocsr()
    A.eliminate_zeros()
    return A


def propagate_mean(A, x0: np.ndarray, t: float, cfg: ExpmvConfig | None = None) -> np.ndarray:
    """Mean of the linear stochastic model at time ``t``: ``exp(t A) x0``."""
    return expm_action(A, t, np.asarray(x0, dtype=float), cfg)


# --------------------------------------------------------------------------- JSON specs


@dataclass
class ProblemSpec:
    """Serializable problem description.

    ``operator``: ``{"type": "heat" | "diffadv" | "advection", "dtil": int, ...}``
    (advection also takes ``"velocity"`` and ``"scheme"``).
    ``Q`` / ``X0``: ``{"type": "random", "rank": int, "seed": int}`` (optional
    ``"distribution"``: ``"uniform"`` or ``"normal"``), ``{"type": "zero"}``,
    ``{"type": "identity"}``; for DREs ``Q``/``P`` come from ``lqr`` when given.
    ``solver`` holds run defaults (method, rank, nsteps, tolerances).
    """

    kind: str = "dle"
    operator: dict = field(default_factory=lambda: {"type": "heat", "dtil": 20})
    Q: dict = field(default_factory=lambda: {"type": "random", "rank": 5, "seed": 1})
    X0: dict = field(default_factory=lambda: {"type": "random", "rank": 10, "seed": 2})
    lqr: dict | None = None
    t0: float = 0.0
    T: float = 0.1
    solver: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown problem fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ProblemSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    def digest(self) -> str:
        """Hash of the mathematical problem (solver settings excluded)."""
        data = asdict(self)
        data.pop("solver")
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def dim(self) -> int:
        return int(self.operator["dtil"]) ** 2

    def build_operator(self):
        op = self.operator
        kind, dtil = op.get("type", "heat"), int(op["dtil"])
        if kind == "heat":
            return build_heat_operator(dtil)
        if kind == "diffadv":
            return build_diffadv_operator(dtil, op.get("cx", 10.0), op.get("cy", 100.0))
        if kind == "advection":
            ux, uy = velocity_field(dtil, op.get("velocity", "rotational"), op.get("speed", 1.0))
            return build_advection_operator(dtil, ux, uy, op.get("scheme", "upwind"))
        raise ContractError(f"unknown operator type {kind!r}")

    def _factor(self, desc: dict) -> SymLowRank:
        d = self.dim
        kind = desc.get("type", "random")
        if kind == "random":
            return random_psd_lowrank(d, int(desc["rank"]), int(desc["seed"]),
                                      desc.get("distribution", "uniform"))
        if kind == "zero":
            return SymLowRank.zeros(d, 0)
        if kind == "identity":
            return SymLowRank(np.eye(d), float(desc.get("scale", 1.0)) * np.eye(d))
        raise ContractError(f"unknown matrix descriptor {kind!r}")

    def build(self):
        """Return a ``DLEProblem`` or ``DREProblem``."""
        from .lyapunov import DLEProblem
        from .riccati import DREProblem, LQRSpec, lqr_to_dre

        A = self.build_operator()
        X0 = self._factor(self.X0)
        if self.kind == "dle":
            return DLEProblem(A, self._factor(self.Q), X0, self.t0, self.T)
        if self.kind != "dre":
            raise ContractError(f"unknown problem kind {self.kind!r}")
        if self.lqr is None:
            raise ContractError("DRE problems need an 'lqr' block")
        B, C = build_lqr_vectors(int(self.operator["dtil"]))
        spec = LQRSpec(
            A,
            B,
            C,
            float(self.lqr.get("Qw", 100.0)) * np.eye(C.shape[0]),
            float(self.lqr.get("Rw", 1.0)) * np.eye(B.shape[1]),
        )
        p = lqr_to_dre(spec)
        return DREProblem(p.A, p.Q, p.P, X0, self.t0, self.T)


def heat_dle_spec(dtil: int = 20, T: float = 0.1, q_rank: int = 5, x0_rank: int = 10,
                  seed: int = 1) -> ProblemSpec:
    """Heat-equation DLE with random PSD ``Q`` and ``X0``."""
    return ProblemSpec(
        kind="dle",
        operator={"type": "heat", "dtil": dtil},
        Q={"type": "random", "rank": q_rank, "seed": seed},
        X0={"type": "random", "rank": x0_rank, "seed": seed + 1},
        T=T,
    )


def lqr_dre_spec(dtil: int = 20, T: float = 0.1, x0: str = "zero") -> ProblemSpec:
    """Diffusion-advection LQR Riccati problem with ``Qw = 100``, ``Rw = 1``."""
    return ProblemSpec(
        kind="dre",
        operator={"type": "diffadv", "dtil": dtil},
        Q={"type": "zero"},
        X0={"type": x0},
        lqr={"Qw": 100.0, "Rw": 1.0},
        T=T,
    )
