"""Coarse observables shared by the Monte Carlo, CPI and PDE paths."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = ["PhaseDensity", "JointHistogram", "Trajectory", "node_cell_widths"]


def node_cell_widths(M: int) -> np.ndarray:
    """Widths of the node-centred cells of the ``M + 1`` node grid (half cells at the ends)."""
    w = np.full(M + 1, 1.0 / M)
    w[0] = w[-1] = 0.5 / M
    return w


@dataclass
class PhaseDensity:
    """Phase density ``rho`` (items per unit phase) at nodes ``x_j = j / M``."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 3:
            raise ValueError("a phase density needs at least 3 nodes (M >= 2)")

    @property
    def M(self) -> int:
        return self.values.size - 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.M + 1)

    @property
    def wip(self) -> float:
        """Trapezoidal integral of ``rho`` over ``[0, 1]``."""
        return float(node_cell_widths(self.M) @ self.values)

    @classmethod
    def zeros(cls, M: int, time: float = 0.0) -> "PhaseDensity":
        return cls(np.zeros(M + 1), time)

    def copy(self, time: Optional[float] = None) -> "PhaseDensity":
        return PhaseDensity(self.values.copy(), self.time if time is None else time)


@dataclass
class JointHistogram:
    """Counts of in-progress items over (phase, TPT) bins, pooled over realizations."""

    counts: np.ndarray
    x_edges: np.ndarray
    r_edges: np.ndarray
    n_realizations: int
    time: float = 0.0

    @property
    def nx(self) -> int:
        return self.counts.shape[0]

    @property
    def nr(self) -> int:
        return self.counts.shape[1]

    @property
    def r_centers(self) -> np.ndarray:
        return 0.5 * (self.r_edges[1:] + self.r_edges[:-1])

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def nonempty(self) -> np.ndarray:
        return self.row_totals > 0

    def phase_histogram(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def conditional(self) -> np.ndarray:
        """Row-normalised densities ``f(r | x)``; empty rows are NaN, not zero."""
        dr = np.diff(self.r_edges)
        totals = self.row_totals.astype(float)
        out = np.full(self.counts.shape, np.nan)
        ok = totals > 0
        out[ok] = self.counts[ok] / totals[ok, None] / dr[None, :]
        return out


@dataclass
class Trajectory:
    """Time series of WIP, outflux and (optionally) nodal densities."""

    times: np.ndarray
    wip: np.ndarray
    outflux: np.ndarray
    densities: Optional[np.ndarray] = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.wip = np.asarray(self.wip, dtype=float)
        self.outflux = np.asarray(self.outflux, dtype=float)
        if self.densities is not None:
            self.densities = np.asarray(self.densities, dtype=float)

    def __len__(self):
        return self.times.size

    def density_at(self, k: int) -> PhaseDensity:
        return PhaseDensity(self.densities[k], float(self.times[k]))
