"""Fine-scale stochastic phase model of a single factory realization.

Each item carries a phase in ``[0, 1)`` and a current throughput time (TPT)
``tau``.  One micro step of length ``dt``:

1. advance every phase by ``dt / tau`` using the TPT held at the start of the step;
2. with probability ``omega(tau, t) * dt`` replace ``tau`` by a fresh draw from
   the TPT distribution, where ``omega(r, t) = lambda(t) / (r * T_-1(t))``;
3. inject arrivals from a deterministic fractional accumulator;
4. remove items whose phase reached 1, logging ``(exit_time, arrival_time)``.

The distribution's WIP modulation is evaluated from the current WIP at the
start of every step, and again (with WIP incremented) for each arrival.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .distributions import InfluxProfile, TptDistribution
from .errors import DomainError, StepSizeError

__all__ = [
    "Item",
    "Realization",
    "omega",
    "micro_step",
    "inject_arrivals",
    "collect_exits",
    "ACCUMULATOR_EPS",
]

log = logging.getLogger(__name__)

# an accumulator within this of 1 counts as a whole arrival; absorbs rounding in lambda*dt sums
ACCUMULATOR_EPS = 1e-9


@dataclass(frozen=True)
class Item:
    phase: float
    tpt: float
    arrival_time: float


def omega(r, t: float, influx: InfluxProfile, dist: TptDistribution, wip=0.0):
    """TPT update frequency ``lambda(t) / (r * T_-1(t))`` in 1/s."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0.0):
        raise DomainError("omega requires r > 0")
    lam = influx(t)
    val = lam / (r_arr * dist.t_minus_one(t, wip))
    return float(val) if val.ndim == 0 else val


@dataclass
class Realization:
    """One stochastic copy of the factory.

    Items are stored column-wise (``phase``, ``tpt``, ``arrival_time``).  The
    generator is owned by the realization, so equal seeds reproduce equal
    trajectories.
    """

    rng: np.random.Generator
    phase: np.ndarray = field(default_factory=lambda: np.empty(0))
    tpt: np.ndarray = field(default_factory=lambda: np.empty(0))
    arrival_time: np.ndarray = field(default_factory=lambda: np.empty(0))
    accumulator: float = 0.0
    exit_log: list = field(default_factory=list)
    injected: int = 0

    @classmethod
    def empty(cls, seed=None, accumulator: float = 0.0) -> "Realization":
        return cls(rng=np.random.default_rng(seed), accumulator=accumulator)

    @classmethod
    def from_items(cls, items, seed=None, accumulator: float = 0.0) -> "Realization":
        items = list(items)
        return cls(
            rng=np.random.default_rng(seed),
            phase=np.array([it.phase for it in items], dtype=float),
            tpt=np.array([it.tpt for it in items], dtype=float),
            arrival_time=np.array([it.arrival_time for it in items], dtype=float),
            accumulator=accumulator,
        )

    @property
    def items(self) -> list:
        return [Item(float(p), float(r), float(a)) for p, r, a in zip(self.phase, self.tpt, self.arrival_time)]

    @property
    def wip(self) -> int:
        return int(self.phase.size)

    @property
    def exited(self) -> int:
        return len(self.exit_log)

    def realized_tpts(self) -> np.ndarray:
        return np.array([e - a for e, a in self.exit_log])


def micro_step(state: Realization, t: float, dt: float, influx: InfluxProfile,
               dist: TptDistribution) -> Realization:
    """Advance ``state`` from ``t`` to ``t + dt`` in place and return it."""
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    if state.phase.size:
        static = dist.at(t, state.wip)
        prob = omega(state.tpt, t, influx, static) * dt
        if np.any(prob > 1.0):
            bad = state.tpt[np.argmax(prob)]
            raise StepSizeError(
                f"omega*dt = {prob.max():.4g} > 1 for item with tau = {bad:.6g} s at t = {t:.6g} s; reduce dt")
        state.phase += dt / state.tpt
        hit = state.rng.random(state.phase.size) < prob
        n_hit = int(hit.sum())
        if n_hit:
            state.tpt[hit] = static.sample(state.rng, n_hit)
    inject_arrivals(state, t, dt, influx, dist)
    collect_exits(state, t + dt)
    return state


def inject_arrivals(state: Realization, t: float, dt: float, influx: InfluxProfile,
                    dist: TptDistribution) -> Realization:
    """Accumulate ``lambda(t) * dt`` and create one item per whole unit."""
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    state.accumulator += influx(t) * dt
    new_tpt = []
    wip = state.wip
    while state.accumulator >= 1.0 - ACCUMULATOR_EPS:
        wip += 1
        new_tpt.append(float(dist.at(t, wip).sample(state.rng)))
        state.accumulator = max(state.accumulator - 1.0, 0.0)
    if new_tpt:
        n = len(new_tpt)
        state.phase = np.concatenate([state.phase, np.zeros(n)])
        state.tpt = np.concatenate([state.tpt, new_tpt])
        state.arrival_time = np.concatenate([state.arrival_time, np.full(n, float(t))])
        state.injected += n
    return state


def collect_exits(state: Realization, t: float) -> Realization:
    """Remove items with phase >= 1 and log ``(t, arrival_time)`` for each."""
    done = state.phase >= 1.0
    if done.any():
        state.exit_log.extend((float(t), float(a)) for a in state.arrival_time[done])
        keep = ~done
        state.phase = state.phase[keep]
        state.tpt = state.tpt[keep]
        state.arrival_time = state.arrival_time[keep]
    return state
