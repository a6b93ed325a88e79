"""Lifting: build item-level ensembles consistent with a coarse phase density.

For every realization the number of items is drawn so that its mean equals
the WIP of the density, phases are drawn by inverse-transform sampling of
``rho / WIP`` and TPTs from the length-biased law ``r T(r, t) / T_1``, which
does not depend on the phase in the slaved regime.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import TptDistribution
from .ensemble import EnsembleState
from .errors import DomainError, NoMassError
from .observables import PhaseDensity, node_cell_widths

__all__ = ["LiftSpec", "integer_split", "PhaseSampler", "LengthBiasedSampler", "phase_sampler",
           "tpt_sampler", "lift"]


def integer_split(wip, rng: np.random.Generator, size=None):
    """Random integer(s) with expectation exactly ``wip``.

    ``floor(wip)`` with probability ``a = floor(wip) + 1 - wip``, else ``floor(wip) + 1``.
    """
    if wip < 0:
        raise DomainError("WIP must be non-negative")
    base = int(np.floor(wip))
    a = base + 1 - wip
    p = rng.random(size)
    return np.where(p < a, base, base + 1) if size is not None else (base if p < a else base + 1)


class PhaseSampler:
    """Inverse-transform sampler of the normalised phase density ``rho / WIP``.

    ``interpolation="linear"`` (default) interpolates the nodal values linearly,
    so the CDF is piecewise quadratic and is inverted segment by segment.
    ``interpolation="cell"`` treats ``rho_j`` as constant over node ``j``'s cell;
    lifting followed by restriction is then unbiased node by node.
    """

    def __init__(self, density: PhaseDensity, interpolation: str = "linear"):
        rho = np.asarray(density.values, dtype=float)
        if np.any(rho < 0.0) or not np.all(np.isfinite(rho)):
            raise DomainError("phase density must be finite and non-negative")
        M = rho.size - 1
        if interpolation == "linear":
            self.edges = np.linspace(0.0, 1.0, M + 1)
            self.left = rho[:-1]
            self.right = rho[1:]
        elif interpolation == "cell":
            self.edges = np.concatenate([[0.0], (np.arange(M) + 0.5) / M, [1.0]])
            self.left = self.right = rho
        else:
            raise DomainError(f"unknown interpolation {interpolation!r}")
        self.interpolation = interpolation
        self.widths = np.diff(self.edges)
        self.masses = 0.5 * (self.left + self.right) * self.widths
        self.cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        self.wip = float(self.cum[-1])
        if self.wip <= 0.0:
            raise NoMassError("cannot sample phases from an all-zero density")

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        k = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.masses.size - 1)
        s = x - self.edges[k]
        slope = (self.right[k] - self.left[k]) / self.widths[k]
        return (self.cum[k] + self.left[k] * s + 0.5 * slope * s * s) / self.wip

    def ppf(self, u):
        target = np.asarray(u, dtype=float) * self.wip
        k = np.searchsorted(self.cum[1:-1], target, side="right")
        m = np.maximum(target - self.cum[k], 0.0)
        lo = self.left[k]
        dslope = (self.right[k] - lo) / self.widths[k]
        # root of lo*s + dslope*s^2/2 = m, cancellation-free form
        disc = np.maximum(lo * lo + 2.0 * dslope * m, 0.0)
        denom = lo + np.sqrt(disc)
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(denom > 0.0, 2.0 * m / denom, 0.0)
        return np.clip(self.edges[k] + np.minimum(s, self.widths[k]), 0.0, np.nextafter(1.0, 0.0))

    def __call__(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))


class LengthBiasedSampler:
    """Inverse-transform sampler of ``r T(r, t) / T_1``."""

    def __init__(self, dist: TptDistribution, t: float = 0.0, wip: float = 0.0):
        self.dist = dist.at(t, wip)
        m = self.dist.moments()
        if m.t_1 <= 0.0:
            raise DomainError("T_1 must be positive")

    def ppf(self, u):
        return self.dist.length_biased_ppf(u)

    def __call__(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))


def phase_sampler(density: PhaseDensity, interpolation: str = "linear") -> PhaseSampler:
    return PhaseSampler(density, interpolation)


def tpt_sampler(dist: TptDistribution, t: float = 0.0, wip: float = 0.0) -> LengthBiasedSampler:
    return LengthBiasedSampler(dist, t, wip)


@dataclass
class LiftSpec:
    density: PhaseDensity
    dist: TptDistribution
    time: float
    n_realizations: int
    seed: int = 0
    dt: float = 1e-3
    interpolation: str = "linear"

    def __post_init__(self):
        if self.n_realizations < 1:
            raise DomainError("n_realizations must be >= 1")
        if np.any(np.asarray(self.density.values) < 0.0):
            raise DomainError("lifted density must be non-negative")


def lift(spec: LiftSpec) -> EnsembleState:
    """Ensemble of ``spec.n_realizations`` realizations consistent with ``spec.density``.

    Arrival accumulators are staggered over ``[0, 1)`` (see :class:`EnsembleState`)
    and arrival times are back-filled as ``t - phase * tau``; they only feed
    TPT reporting, never the dynamics.
    """
    R = spec.n_realizations
    ens = EnsembleState(R, dt=spec.dt, seed=spec.seed, time=spec.time)
    rng = ens.rng
    wip = float(node_cell_widths(spec.density.M) @ spec.density.values)
    if wip <= 0.0:
        return ens
    counts = integer_split(wip, rng, size=R)
    total = int(counts.sum())
    if total == 0:
        return ens
    owners = np.repeat(np.arange(R), counts)
    phases = phase_sampler(spec.density, spec.interpolation)(rng, total)
    if spec.dist.is_modulated:
        tpts = np.empty(total)
        per_item_n = counts[owners]
        for n in np.unique(per_item_n):
            sel = per_item_n == n
            tpts[sel] = tpt_sampler(spec.dist, spec.time, float(n))(rng, int(sel.sum()))
    else:
        tpts = tpt_sampler(spec.dist, spec.time)(rng, total)
    ens.add_items(phases, tpts, spec.time - phases * tpts, owners)
    return ens
