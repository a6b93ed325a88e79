"""Coarse projective integration (CPI) of the phase density.

One coarse step: lift the nodal density, run a short burst of micro steps,
restrict at the fit steps, estimate ``d rho / dt`` per node by least squares
and extrapolate with forward Euler over the rest of the coarse step.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .distributions import InfluxProfile, TptDistribution
from .errors import ComparisonError, DomainError, SingularFitError
from .lifting import LiftSpec, lift
from .observables import PhaseDensity, Trajectory
from .ensemble import restrict_density

__all__ = ["CpiConfig", "BurstResult", "StepReport", "lsq_slope", "project", "coarse_step",
           "cpi_step", "run_cpi", "step_verify", "coarse_courant", "windowed_outflux", "rms_deviation"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CpiConfig:
    """Protocol constants of the coarse projective integrator.

    ``dt_coarse`` equal to the burst duration is accepted: the projection term
    vanishes and CPI reduces to lift / burst / restrict.
    """

    dt_micro: float = 1e-3
    burst_steps: int = 20
    fit_steps: tuple = (12, 14, 16, 18, 20)
    dt_coarse: float = 0.2
    M: int = 8
    n_realizations: int = 5000
    interpolation: str = "linear"

    def __post_init__(self):
        fit = tuple(int(s) for s in self.fit_steps)
        object.__setattr__(self, "fit_steps", fit)
        if self.dt_micro <= 0.0:
            raise DomainError("dt_micro must be positive")
        if self.burst_steps < 1:
            raise DomainError("burst_steps must be >= 1")
        if len(fit) < 2 or any(b <= a for a, b in zip(fit, fit[1:])):
            raise DomainError("fit_steps must be strictly increasing with at least two entries")
        if fit[-1] != self.burst_steps:
            raise DomainError("the last fit step must be the last burst step")
        if fit[0] < 0:
            raise DomainError("fit steps must be non-negative")
        if self.dt_coarse < self.burst_duration * (1.0 - 1e-12):
            raise DomainError("dt_coarse must be at least the burst duration")
        if self.M < 2 or self.n_realizations < 1:
            raise DomainError("need M >= 2 and n_realizations >= 1")

    @property
    def burst_duration(self) -> float:
        return self.burst_steps * self.dt_micro

    @property
    def projection_gap(self) -> float:
        return max(self.dt_coarse - self.burst_duration, 0.0)

    @property
    def savings(self) -> float:
        """Fraction of micro steps saved relative to direct simulation."""
        return 1.0 - self.burst_duration / self.dt_coarse


def coarse_courant(dist: TptDistribution, cfg: CpiConfig, t: float = 0.0, wip: float = 0.0) -> float:
    """Transport Courant number ``dt_coarse * M / T_1`` of the projective step.

    The density moves at the mean phase velocity ``1 / T_1``.  Lifting with
    linear interpolation and restricting again acts like a centred spatial
    operator, and forward-Euler projection of a centred advection operator
    is unstable; in practice CPI tracks the direct ensemble only while this
    number stays below about one.
    """
    return cfg.dt_coarse * cfg.M / dist.moments(t, wip).t_1


def lsq_slope(times: Sequence[float], values) -> np.ndarray:
    """Ordinary least-squares slope of each column of ``values`` against ``times``.

    ``values`` is ``(K, n_nodes)`` (or a list of :class:`PhaseDensity`).
    """
    if isinstance(values, (list, tuple)) and values and isinstance(values[0], PhaseDensity):
        values = [v.values for v in values]
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 2 or y.shape[0] != t.size:
        raise SingularFitError("need at least two snapshots, one per time")
    if np.unique(t).size != t.size:
        raise SingularFitError("snapshot times must be distinct")
    tc = t - t.mean()
    return tc @ (y - y.mean(axis=0)) / (tc @ tc)


def project(density: PhaseDensity, slope, cfg: CpiConfig, t_target: Optional[float] = None) -> PhaseDensity:
    """Forward-Euler extrapolation over ``dt_coarse - burst duration``.

    Negative nodal values are clipped to zero (with a warning).
    """
    gap = cfg.projection_gap
    if t_target is not None:
        gap = max(t_target - density.time, 0.0)
    vals = density.values + gap * np.asarray(slope, dtype=float)
    neg = vals < 0.0
    if neg.any():
        log.warning("projection undershoot at t=%.4g: clipping %d node(s), min %.4g", density.time, int(neg.sum()),
                    float(vals.min()))
        vals = np.where(neg, 0.0, vals)
    return PhaseDensity(vals, density.time + gap)


@dataclass
class BurstResult:
    """Everything one coarse step observed."""

    density: PhaseDensity
    end_of_burst: PhaseDensity
    slope: np.ndarray
    fit_times: np.ndarray
    burst_times: np.ndarray
    burst_wip: np.ndarray
    exits: int
    outflux: float
    micro_steps: int


def coarse_step(density: PhaseDensity, t: float, influx: InfluxProfile, dist: TptDistribution, cfg: CpiConfig,
                seed: int, dt_coarse: Optional[float] = None) -> BurstResult:
    """Lift, burst, restrict, fit and project once; ``dt_coarse`` overrides the config (last partial step)."""
    dt_c = cfg.dt_coarse if dt_coarse is None else dt_coarse
    ens = lift(LiftSpec(density=PhaseDensity(density.values, t), dist=dist, time=t,
                        n_realizations=cfg.n_realizations, seed=seed, dt=cfg.dt_micro,
                        interpolation=cfg.interpolation))
    fit = set(cfg.fit_steps)
    snaps, fit_times = [], []
    burst_t, burst_w = [ens.time], [ens.mean_wip()]
    if 0 in fit:
        snaps.append(restrict_density(ens, cfg.M).values)
        fit_times.append(ens.time)
    for i in range(1, cfg.burst_steps + 1):
        ens.step(influx, dist)
        burst_t.append(ens.time)
        burst_w.append(ens.mean_wip())
        if i in fit:
            snaps.append(restrict_density(ens, cfg.M).values)
            fit_times.append(ens.time)
    slope = lsq_slope(fit_times, snaps)
    end = PhaseDensity(snaps[-1], ens.time)
    projected = project(end, slope, cfg, t_target=t + dt_c)
    projected.time = t + dt_c
    exits = int(ens.exited.sum())
    return BurstResult(density=projected, end_of_burst=end, slope=slope, fit_times=np.array(fit_times),
                       burst_times=np.array(burst_t), burst_wip=np.array(burst_w), exits=exits,
                       outflux=exits / (cfg.n_realizations * cfg.burst_duration), micro_steps=ens.steps)


def cpi_step(density: PhaseDensity, t: float, influx: InfluxProfile, dist: TptDistribution, cfg: CpiConfig,
             seed: int) -> PhaseDensity:
    """Density at ``t + dt_coarse`` from one lift / burst / projection cycle."""
    return coarse_step(density, t, influx, dist, cfg, seed).density


def run_cpi(initial: PhaseDensity, t0: float, t_end: float, influx: InfluxProfile, dist: TptDistribution,
            cfg: CpiConfig, seed: int = 0, label: str = "") -> Trajectory:
    """Repeated coarse steps from ``t0`` to ``t_end``; step ``k`` is seeded with ``seed + k``.

    The last step is shortened to land on ``t_end`` (never below one burst).
    Outflux at each recorded time is the exit rate of the burst that produced it.
    ``meta`` holds the intra-burst WIP clusters and the micro-step counter.
    """
    if t_end <= t0:
        raise DomainError("t_end must exceed t0")
    if initial.M != cfg.M:
        raise DomainError(f"initial density has M={initial.M}, config expects M={cfg.M}")
    courant = coarse_courant(dist, cfg, t0, initial.wip)
    if courant > 1.0:
        log.warning("coarse Courant number %.2f exceeds 1 (dt_coarse=%g, M=%d): projection is likely unstable",
                    courant, cfg.dt_coarse, cfg.M)
    wall = _time.perf_counter()
    dens = initial.copy(time=t0)
    times, wips, outs, rows = [t0], [dens.wip], [np.nan], [dens.values.copy()]
    cluster_t, cluster_w = [], []
    micro = 0
    k = 0
    t = t0
    while t < t_end - 1e-9:
        t_next = min(t0 + (k + 1) * cfg.dt_coarse, t_end)
        step_len = max(t_next - t, cfg.burst_duration)
        res = coarse_step(dens, t, influx, dist, cfg, seed + k, dt_coarse=step_len)
        dens = res.density
        t = dens.time
        micro += res.micro_steps
        times.append(t)
        wips.append(dens.wip)
        outs.append(res.outflux)
        rows.append(dens.values.copy())
        cluster_t.append(res.burst_times)
        cluster_w.append(res.burst_wip)
        k += 1
    label = label or f"cpi dt_c={cfg.dt_coarse:g}"
    meta = {"micro_steps": micro, "coarse_steps": k, "wall_time": _time.perf_counter() - wall,
            "cluster_times": np.array(cluster_t), "cluster_wip": np.array(cluster_w),
            "dt_coarse": cfg.dt_coarse, "n_realizations": cfg.n_realizations, "seed": seed,
            "courant": courant}
    return Trajectory(np.array(times), np.array(wips), np.array(outs), np.array(rows), label=label, meta=meta)


@dataclass
class StepReport:
    deviation: float
    tol: float
    passed: bool
    worst_time: float
    n_compared: int
    quantity: str = "wip"

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: max relative {self.quantity} deviation {self.deviation:.4%} "
                f"(tol {self.tol:.2%}, worst at t={self.worst_time:.3f}s, {self.n_compared} points)")


def step_verify(traj_a: Trajectory, traj_b: Trajectory, tol: float, t_min: Optional[float] = None,
                quantity: str = "wip") -> StepReport:
    """Max relative deviation of ``traj_b`` from ``traj_a`` on ``traj_a``'s time stamps.

    ``traj_b`` is linearly interpolated where stamps differ; only the
    overlapping range (and ``t >= t_min``) is compared.
    """
    ta, tb = traj_a.times, traj_b.times
    ya, yb = getattr(traj_a, quantity), getattr(traj_b, quantity)
    lo = max(ta.min(), tb.min())
    hi = min(ta.max(), tb.max())
    if t_min is not None:
        lo = max(lo, t_min)
    sel = (ta >= lo - 1e-9) & (ta <= hi + 1e-9) & np.isfinite(ya)
    okb = np.isfinite(yb)
    if hi < lo or not sel.any() or okb.sum() < 1:
        raise ComparisonError("trajectories do not overlap in time")
    a = ya[sel]
    b = np.interp(ta[sel], tb[okb], yb[okb])
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(a == b, 0.0, np.abs(b - a) / np.abs(a))
    k = int(np.argmax(rel))
    dev = float(rel[k])
    return StepReport(deviation=dev, tol=tol, passed=dev <= tol, worst_time=float(ta[sel][k]),
                      n_compared=int(sel.sum()), quantity=quantity)


def windowed_outflux(traj: Trajectory, window: float = 0.5) -> np.ndarray:
    """Trailing-window average of a CPI trajectory's held burst exit rates.

    Between coarse stamps ``t_{k-1}`` and ``t_k`` the outflux is the rate of
    the burst that started at ``t_{k-1}``, held constant.  Averaging that
    step function over ``[t_k - window, t_k]`` gives the same observable a
    direct ensemble reports (exits in the trailing window divided by the
    window).  Before a full window has elapsed the average runs over the
    elapsed part only.
    """
    if window <= 0.0:
        raise DomainError("window must be positive")
    t = traj.times
    rate = np.nan_to_num(traj.outflux[1:], nan=0.0)
    cum = np.concatenate([[0.0], np.cumsum(rate * np.diff(t))])
    out = np.full(t.size, np.nan)
    for k in range(1, t.size):
        lo = max(t[k] - window, t[0])
        j = min(max(int(np.searchsorted(t, lo, side="right")) - 1, 0), k - 1)
        area = cum[k] - cum[j] - rate[j] * (lo - t[j])
        out[k] = area / (t[k] - lo)
    return out


def rms_deviation(traj_a: Trajectory, traj_b: Trajectory, t_min: Optional[float] = None,
                  quantity: str = "wip") -> float:
    """Root-mean-square relative deviation of ``traj_b`` from ``traj_a`` (same sampling as :func:`step_verify`)."""
    ta, tb = traj_a.times, traj_b.times
    ya, yb = getattr(traj_a, quantity), getattr(traj_b, quantity)
    lo = max(ta.min(), tb.min(), t_min if t_min is not None else -np.inf)
    hi = min(ta.max(), tb.max())
    sel = (ta >= lo - 1e-9) & (ta <= hi + 1e-9) & np.isfinite(ya) & (ya != 0)
    okb = np.isfinite(yb)
    if not sel.any():
        raise ComparisonError("trajectories do not overlap in time")
    b = np.interp(ta[sel], tb[okb], yb[okb])
    return float(np.sqrt(np.mean(((b - ya[sel]) / ya[sel]) ** 2)))
