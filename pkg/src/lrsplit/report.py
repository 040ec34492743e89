"""Result container shared by all time-stepping drivers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matcore import GenLowRank, SymLowRank


@dataclass
class SolveReport:
    """Outcome of a time integration.

    ``sym_defect`` and ``psd_defect`` hold the absolute, factored defects
    ``||Y - Y^T||_F`` and ``||Y - Yhat||_F`` after every step (empty when
    tracking is off). ``timings`` accumulates wall-clock seconds per phase.
    """

    method: str
    rank: int
    nsteps: int
    times: np.ndarray
    final: SymLowRank | GenLowRank
    ranks: list[int] = field(default_factory=list)
    sym_defect: list[float] = field(default_factory=list)
    psd_defect: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def add_time(self, phase: str, seconds: float) -> None:
        self.timings[phase] = self.timings.get(phase, 0.0) + seconds

    @property
    def seconds(self) -> float:
        return self.timings.get("total", sum(self.timings.values()))

    def summary(self) -> dict:
        """JSON-serializable summary (factors excluded)."""
        return {
            "method": self.method,
            "rank": self.rank,
            "nsteps": self.nsteps,
            "t0": float(self.times[0]),
            "T": float(self.times[-1]),
            "final_rank": int(self.final.rank),
            "dim": int(self.final.dim),
            "ranks": [int(r) for r in self.ranks],
            "sym_defect": [float(x) for x in self.sym_defect],
            "psd_defect": [float(x) for x in self.psd_defect],
            "timings": {k: float(v) for k, v in self.timings.items()},
        }
