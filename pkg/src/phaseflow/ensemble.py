"""Vectorized ensemble of independent factory realizations.

All items of all realizations live in one pool of flat arrays (``phase``,
``tpt``, ``arrival``, ``owner``).  Exited items leave their slot with
``phase = -inf`` and the slot is recycled by later arrivals, so a micro step
costs a handful of passes over the pool and never reallocates in the
stationary regime.  The update rule is the one of :func:`phaseflow.model.micro_step`.
"""
from __future__ import annotations

import logging
import math
from typing import Callable, Optional

import numpy as np

from .distributions import InfluxProfile, TptDistribution
from .errors import DiagnosticUndefinedError, DomainError, StepSizeError
from .model import ACCUMULATOR_EPS, Realization
from .observables import JointHistogram, PhaseDensity, Trajectory, node_cell_widths

__all__ = [
    "EnsembleState",
    "evolve",
    "restrict_density",
    "estimate_conditional",
    "slaving_diagnostic",
    "origin_line_r2",
    "wip_and_outflux",
    "run_direct",
    "n_steps_for",
]

log = logging.getLogger(__name__)

DEAD = -np.inf


def n_steps_for(horizon: float, dt: float) -> int:
    """Number of micro steps covering ``horizon`` (ceil, tolerant to rounding)."""
    return int(math.ceil(horizon / dt - 1e-9))


class EnsembleState:
    """A set of independent realizations sharing one clock.

    Parameters
    ----------
    n_realizations : int
    dt : float
        Micro time step (s).
    seed : int or None
        Seed of the ensemble's generator.  Every random draw of the ensemble
        (lifting included, when built by :func:`phaseflow.lifting.lift`) comes
        from this one stream, so runs are reproducible bit-for-bit.
    time : float
        Initial clock value (s).
    accumulators : {"staggered", "zero"} or array
        Initial arrival accumulators.  ``"staggered"`` spreads them over
        ``[0, 1)`` in strata ``(k + U_k) / R`` so the ensemble entry flux is
        smooth; ``"zero"`` makes every realization arrive in lock step.
    record_exits : bool
        Keep the full ``(owner, exit_time, arrival_time)`` exit log.
    """

    def __init__(self, n_realizations: int, dt: float = 1e-3, seed=None, time: float = 0.0,
                 accumulators="staggered", record_exits: bool = True):
        if n_realizations < 1:
            raise DomainError("an ensemble needs at least one realization")
        if dt <= 0.0:
            raise DomainError("dt must be positive")
        R = int(n_realizations)
        self.n_realizations = R
        self.dt = float(dt)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.t0 = float(time)
        self.steps = 0
        self.record_exits = record_exits

        self.phase = np.empty(0)
        self.tpt = np.empty(0)
        self.dphase = np.empty(0)
        self.arrival = np.empty(0)
        self.owner = np.empty(0, dtype=np.int64)
        self._free = np.empty(0, dtype=np.int64)
        self._nfree = 0

        self.wip_counts = np.zeros(R, dtype=np.int64)
        self.injected = np.zeros(R, dtype=np.int64)
        self.exited = np.zeros(R, dtype=np.int64)
        if isinstance(accumulators, str):
            if accumulators == "staggered":
                self.accumulator = (np.arange(R) + self.rng.random(R)) / R
            elif accumulators == "zero":
                self.accumulator = np.zeros(R)
            else:
                raise DomainError(f"unknown accumulator initialisation {accumulators!r}")
        else:
            acc = np.asarray(accumulators, dtype=float)
            if acc.shape != (R,) or np.any((acc < 0.0) | (acc >= 1.0)):
                raise DomainError("accumulators must be R values in [0, 1)")
            self.accumulator = acc.copy()

        self.exit_counts: list = []
        self._exit_chunks: list = []

    # -- bookkeeping -------------------------------------------------------------

    @property
    def time(self) -> float:
        return self.t0 + self.steps * self.dt

    @property
    def capacity(self) -> int:
        return self.phase.size

    @property
    def n_items(self) -> int:
        return self.capacity - self._nfree

    @property
    def alive(self) -> np.ndarray:
        return self.phase >= 0.0

    def mean_wip(self) -> float:
        return self.n_items / self.n_realizations

    def _grow(self, need: int):
        cap = self.capacity
        new_cap = max(2 * cap, cap + need, 64)
        extra = new_cap - cap
        self.phase = np.concatenate([self.phase, np.full(extra, DEAD)])
        self.tpt = np.concatenate([self.tpt, np.ones(extra)])
        self.dphase = np.concatenate([self.dphase, np.zeros(extra)])
        self.arrival = np.concatenate([self.arrival, np.full(extra, np.nan)])
        self.owner = np.concatenate([self.owner, np.zeros(extra, dtype=np.int64)])
        free = np.empty(new_cap, dtype=np.int64)
        free[: self._nfree] = self._free[: self._nfree]
        # highest index at the bottom so low slots are handed out first
        free[self._nfree: self._nfree + extra] = np.arange(new_cap - 1, cap - 1, -1)
        self._free = free
        self._nfree += extra

    def add_items(self, phase, tpt, arrival, owner):
        """Place items into free slots (growing the pool if needed)."""
        phase = np.asarray(phase, dtype=float)
        n = phase.size
        if n == 0:
            return
        owner = np.asarray(owner, dtype=np.int64)
        if np.any((owner < 0) | (owner >= self.n_realizations)):
            raise DomainError("item owner index out of range")
        if np.any((phase < 0.0) | (phase >= 1.0)):
            raise DomainError("item phases must lie in [0, 1)")
        tpt = np.asarray(tpt, dtype=float)
        if np.any(tpt <= 0.0):
            raise DomainError("item TPTs must be positive")
        if n > self._nfree:
            self._grow(n - self._nfree)
        slots = self._free[self._nfree - n: self._nfree][::-1].copy()
        self._nfree -= n
        self.phase[slots] = phase
        self.tpt[slots] = tpt
        self.dphase[slots] = self.dt / tpt
        self.arrival[slots] = np.broadcast_to(np.asarray(arrival, dtype=float), (n,))
        self.owner[slots] = owner
        self.wip_counts += np.bincount(owner, minlength=self.n_realizations)

    def _release(self, slots):
        k = slots.size
        self.phase[slots] = DEAD
        self._free[self._nfree: self._nfree + k] = slots
        self._nfree += k

    def items(self):
        """``(phase, tpt, arrival, owner)`` of in-progress items, in slot order."""
        a = self.alive
        return self.phase[a], self.tpt[a], self.arrival[a], self.owner[a]

    def exit_records(self):
        """Concatenated exit log as ``(owner, exit_time, arrival_time)`` arrays."""
        if not self._exit_chunks:
            return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0)
        o, e, a = zip(*self._exit_chunks)
        return np.concatenate(o), np.concatenate(e), np.concatenate(a)

    # -- dynamics ----------------------------------------------------------------

    def step(self, influx: InfluxProfile, dist: TptDistribution):
        """One micro step from ``self.time`` to ``self.time + dt``."""
        t = self.time
        dt = self.dt
        lam = influx(t)
        R = self.n_realizations
        if dist.is_modulated:
            wip_r = self.wip_counts.astype(float)
            lower_r, _ = dist.bounds(t, wip_r)
            c_r = lam * dt / dist.t_minus_one(t, wip_r)
            c = c_r[self.owner]
            c_max, lower_min = float(np.max(c_r)), float(np.min(lower_r))
        else:
            c = lam * dt / dist.t_minus_one(t)
            c_max, lower_min = c, dist.lower

        if self.n_items and c_max > lower_min:
            # omega*dt = c / tau can exceed 1 only for tau < c
            a = self.alive
            prob = (c[a] if np.ndim(c) else c) / self.tpt[a]
            k = int(np.argmax(prob))
            if prob[k] > 1.0:
                raise StepSizeError(
                    f"omega*dt = {prob[k]:.4g} > 1 for item with tau = {self.tpt[a][k]:.6g} s "
                    f"at t = {t:.6g} s; reduce dt")

        self.phase += self.dphase
        if lam > 0.0 and self.capacity:
            u = self.rng.random(self.capacity)
            u *= self.tpt
            hit = np.flatnonzero(u < c)
            hit = hit[self.phase[hit] >= 0.0]
            if hit.size:
                if dist.is_modulated:
                    lo, hi = dist.bounds(t, self.wip_counts[self.owner[hit]].astype(float))
                    new = dist.sample(self.rng, hit.size, lower=lo, upper=hi)
                else:
                    new = dist.sample(self.rng, hit.size)
                self.tpt[hit] = new
                self.dphase[hit] = dt / new

        self._inject(t, lam * dt, dist)
        self._collect(t + dt)
        self.steps += 1

    def _inject(self, t, increment, dist):
        if increment > 0.0:
            self.accumulator += increment
        n_new = np.floor(self.accumulator + ACCUMULATOR_EPS).astype(np.int64)
        total = int(n_new.sum())
        if total == 0:
            return
        self.accumulator = np.maximum(self.accumulator - n_new, 0.0)
        owners = np.repeat(np.arange(self.n_realizations), n_new)
        if dist.is_modulated:
            # each arrival sees the WIP already incremented by the arrivals before it
            rank = np.arange(total) - np.repeat(np.cumsum(n_new) - n_new, n_new)
            lo, hi = dist.bounds(t, (self.wip_counts[owners] + rank + 1).astype(float))
            tpt = dist.sample(self.rng, total, lower=lo, upper=hi)
        else:
            tpt = dist.sample(self.rng, total)
        self.add_items(np.zeros(total), tpt, t, owners)
        self.injected += n_new

    def _collect(self, t_exit):
        ex = np.flatnonzero(self.phase >= 1.0)
        self.exit_counts.append(ex.size)
        if not ex.size:
            return
        o = self.owner[ex]
        cnt = np.bincount(o, minlength=self.n_realizations)
        self.wip_counts -= cnt
        self.exited += cnt
        if self.record_exits:
            self._exit_chunks.append((o, np.full(ex.size, t_exit), self.arrival[ex].copy()))
        self._release(ex)

    # -- conversions --------------------------------------------------------------

    def realization(self, i: int, seed=None) -> Realization:
        """Copy of realization ``i`` as a stand-alone :class:`Realization`."""
        mask = self.alive & (self.owner == i)
        r = Realization(rng=np.random.default_rng(seed), phase=self.phase[mask].copy(),
                        tpt=self.tpt[mask].copy(), arrival_time=self.arrival[mask].copy(),
                        accumulator=float(self.accumulator[i]), injected=int(self.injected[i]))
        if self.record_exits:
            o, e, a = self.exit_records()
            sel = o == i
            r.exit_log = list(zip(e[sel].tolist(), a[sel].tolist()))
        return r

    @property
    def realizations(self) -> list:
        return [self.realization(i) for i in range(self.n_realizations)]

    @classmethod
    def from_realizations(cls, reals, dt: float = 1e-3, seed=None, time: float = 0.0) -> "EnsembleState":
        reals = list(reals)
        ens = cls(len(reals), dt=dt, seed=seed, time=time,
                  accumulators=np.array([r.accumulator for r in reals]))
        for i, r in enumerate(reals):
            ens.add_items(r.phase, r.tpt, r.arrival_time, np.full(r.wip, i))
        return ens

    def merged(self, other: "EnsembleState", seed=None) -> "EnsembleState":
        """Union of two ensembles on the same clock (items and counters, not exit logs)."""
        if abs(self.time - other.time) > 1e-12 or self.dt != other.dt:
            raise DomainError("can only merge ensembles with equal clocks and time steps")
        out = EnsembleState(self.n_realizations + other.n_realizations, dt=self.dt, seed=seed,
                            time=self.time, accumulators=np.concatenate([self.accumulator, other.accumulator]))
        for ens, offset in ((self, 0), (other, self.n_realizations)):
            p, r, a, o = ens.items()
            out.add_items(p, r, a, o + offset)
        return out


def evolve(ens: EnsembleState, horizon: float, influx: InfluxProfile, dist: TptDistribution,
           on_step: Optional[Callable[[EnsembleState], None]] = None) -> EnsembleState:
    """Step every realization ``ceil(horizon / dt)`` times."""
    if horizon < ens.dt * (1.0 - 1e-9):
        raise DomainError(f"horizon {horizon} is shorter than one micro step ({ens.dt})")
    for _ in range(n_steps_for(horizon, ens.dt)):
        ens.step(influx, dist)
        if on_step is not None:
            on_step(ens)
    return ens


def restrict_density(ens: EnsembleState, M: int = 8) -> PhaseDensity:
    """Node-centred binning of in-progress phases onto ``x_j = j / M``."""
    if M < 2:
        raise DomainError("M must be at least 2")
    x = ens.phase[ens.phase >= 0.0]
    j = np.floor(x * M + 0.5).astype(np.int64)
    counts = np.bincount(j, minlength=M + 1)[: M + 1]
    values = counts / ens.n_realizations / node_cell_widths(M)
    return PhaseDensity(values, ens.time)


def estimate_conditional(ens: EnsembleState, dist: TptDistribution, Nx: int = 20, Nr: int = 30) -> JointHistogram:
    """Pooled (phase, TPT) histogram with TPT bins spanning the support of the distribution."""
    if Nx < 2 or Nr < 2:
        raise DomainError("Nx and Nr must be at least 2")
    static = dist.at(ens.time, ens.mean_wip())
    x, r, _, _ = ens.items()
    ix = np.minimum((x * Nx).astype(np.int64), Nx - 1)
    ir = np.clip(np.floor((r - static.lower) / static.width * Nr).astype(np.int64), 0, Nr - 1)
    counts = np.bincount(ix * Nr + ir, minlength=Nx * Nr).reshape(Nx, Nr)
    return JointHistogram(counts=counts, x_edges=np.linspace(0.0, 1.0, Nx + 1),
                          r_edges=np.linspace(static.lower, static.upper, Nr + 1),
                          n_realizations=ens.n_realizations, time=ens.time)


def slaving_diagnostic(hist: JointHistogram, dist: TptDistribution, t: float, wip: float = 0.0):
    """L1 distance of each non-empty row of ``f(r | x)`` from ``r T(r, t) / T_1``.

    Returns ``(per_row, max_l1)``; ``per_row`` is NaN for empty rows.
    """
    ok = hist.nonempty
    if not ok.any():
        raise DiagnosticUndefinedError("every phase row of the histogram is empty")
    static = dist.at(t, wip)
    ref = np.diff(static.length_biased_cdf(hist.r_edges))
    per_row = np.full(hist.nx, np.nan)
    p = hist.counts[ok] / hist.row_totals[ok, None]
    per_row[ok] = np.abs(p - ref[None, :]).sum(axis=1)
    return per_row, float(np.nanmax(per_row))


def origin_line_r2(hist: JointHistogram) -> np.ndarray:
    """R^2 of a least-squares line through the origin fitted to each non-empty conditional row."""
    cond = hist.conditional()
    r = hist.r_centers
    out = np.full(hist.nx, np.nan)
    for i in np.flatnonzero(hist.nonempty):
        y = cond[i]
        beta = (r @ y) / (r @ r)
        ss_res = np.sum((y - beta * r) ** 2)
        ss_tot = np.sum((y - y.mean()) ** 2)
        out[i] = 1.0 - ss_res / ss_tot if ss_tot > 0 else np.nan
    return out


def wip_and_outflux(ens: EnsembleState, window: float = 0.5):
    """Ensemble-mean WIP and exits per second over the trailing ``window``."""
    if window <= 0.0:
        raise DomainError("window must be positive")
    k = max(1, int(round(window / ens.dt)))
    exits = sum(ens.exit_counts[-k:])
    return ens.mean_wip(), exits / (ens.n_realizations * window)


def run_direct(ens: EnsembleState, t_end: float, influx: InfluxProfile, dist: TptDistribution,
               record_every: float = 0.1, M: int = 8, window: float = 0.5, label: str = "direct") -> Trajectory:
    """Evolve ``ens`` to ``t_end``, recording WIP, outflux and density on a fixed cadence."""
    stride = max(1, int(round(record_every / ens.dt)))
    n_total = n_steps_for(t_end - ens.time, ens.dt)
    times, wips, outs, dens = [], [], [], []

    def record():
        w, f = wip_and_outflux(ens, window)
        times.append(ens.time)
        wips.append(w)
        outs.append(f)
        dens.append(restrict_density(ens, M).values)

    record()
    start_steps = ens.steps
    for k in range(1, n_total + 1):
        ens.step(influx, dist)
        if k % stride == 0 or k == n_total:
            record()
    return Trajectory(np.array(times), np.array(wips), np.array(outs), np.array(dens), label=label,
                      meta={"micro_steps": ens.steps - start_steps, "n_realizations": ens.n_realizations})
