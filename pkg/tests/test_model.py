"""Single-realization phase model: update frequency, micro step, arrivals, exits."""
import math

import numpy as np
import pytest

from phaseflow.distributions import InfluxProfile, TptDistribution
from phaseflow.errors import DomainError, InvalidDistributionError, StepSizeError
from phaseflow.model import Item, Realization, collect_exits, inject_arrivals, micro_step, omega


def t_minus_one_uniform(a, b):
    return math.log(b / a) / (b - a)


def test_omega_examples(uniform_short):
    assert omega(1.0, 0.0, InfluxProfile.constant(20.0), uniform_short) == pytest.approx(
        20.0 / t_minus_one_uniform(0.1, 2.0), rel=1e-14)
    assert omega(1.0, 0.0, InfluxProfile.constant(20.0), uniform_short) == pytest.approx(12.685, abs=5e-4)
    assert omega(1.0, 0.0, InfluxProfile.constant(0.0), uniform_short) == 0.0
    w = omega(2.0, 0.0, InfluxProfile.constant(10.0), uniform_short)
    assert w == pytest.approx(3.171, abs=5e-4)
    assert w == pytest.approx(0.5 * omega(1.0, 0.0, InfluxProfile.constant(10.0), uniform_short))


@pytest.mark.parametrize("r", [0.0, -1.0])
def test_omega_rejects_nonpositive_r(r, uniform_short, lam20):
    with pytest.raises(DomainError):
        omega(r, 0.0, lam20, uniform_short)


def test_degenerate_distribution_is_invalid():
    with pytest.raises(InvalidDistributionError):
        TptDistribution.uniform(2.0, 2.0)


def test_advection_without_influx(uniform_short, lam0):
    s = Realization.from_items([Item(0.1, 2.0, 0.0)], seed=1)
    micro_step(s, 0.0, 1e-3, lam0, uniform_short)
    assert s.phase[0] == pytest.approx(0.1005, abs=1e-15)
    assert s.tpt[0] == 2.0


def test_exit_threshold(uniform_short, lam0):
    s = Realization.from_items([Item(0.9995, 1.0, -0.5)], seed=1)
    micro_step(s, 3.0, 1e-3, lam0, uniform_short)
    assert s.wip == 0
    assert s.exit_log == [(3.001, -0.5)]


def test_step_size_violation_names_tau(uniform_short, lam20):
    s = Realization.from_items([Item(0.2, 0.1, 0.0)], seed=1)
    with pytest.raises(StepSizeError, match="tau = 0.1"):
        micro_step(s, 0.0, 0.1, lam20, uniform_short)
    # nothing was silently clamped or advanced
    assert s.phase[0] == 0.2


def test_nonpositive_dt(uniform_short, lam20):
    with pytest.raises(DomainError):
        micro_step(Realization.empty(0), 0.0, 0.0, lam20, uniform_short)


class CountingDist:
    """Wraps a static distribution and counts resample draws (``size`` given) separately from arrivals."""

    def __init__(self, dist):
        self.dist = dist
        self.resampled = 0

    def at(self, t, wip=0.0):
        return self

    def t_minus_one(self, t=0.0, wip=0.0):
        return self.dist.t_minus_one(t, wip)

    def sample(self, rng, size=None, **kw):
        if size is not None:
            self.resampled += size
        return self.dist.sample(rng, size)


def test_resample_count_binomial(uniform_short, lam20):
    dist = CountingDist(uniform_short)
    s = Realization.empty(seed=2024)
    s.phase, s.tpt, s.arrival_time = np.zeros(50), np.full(50, 1.0), np.zeros(50)
    dt = 1e-3
    mean = var = 0.0
    for k in range(1000):
        p = omega(s.tpt, k * dt, lam20, uniform_short) * dt
        mean += p.sum()
        var += (p * (1 - p)).sum()
        micro_step(s, k * dt, dt, lam20, dist)
    assert abs(dist.resampled - mean) < 3 * math.sqrt(var)


def test_injection_accumulator(uniform_short, lam20):
    s = Realization.empty(seed=3)
    arrivals_at = []
    for k in range(1000):
        before = s.injected
        inject_arrivals(s, k * 1e-3, 1e-3, lam20, uniform_short)
        if s.injected > before:
            arrivals_at.append(k)
        assert 0.0 <= s.accumulator < 1.0
    assert s.injected == 20
    assert np.all(np.diff(arrivals_at) == 50)
    assert np.all(s.phase == 0.0)
    assert np.all((s.tpt >= 0.1) & (s.tpt <= 2.0))


def test_no_arrivals_without_influx(uniform_short, lam0):
    s = Realization.empty(seed=3, accumulator=0.3)
    inject_arrivals(s, 0.0, 1e-3, lam0, uniform_short)
    assert s.injected == 0 and s.accumulator == 0.3


def test_entry_flux_is_exact(uniform_short, lam20):
    s = Realization.empty(seed=5)
    for k in range(5000):
        micro_step(s, k * 1e-3, 1e-3, lam20, uniform_short)
    assert s.injected == 100
    assert s.injected == s.wip + s.exited


def test_arrival_sees_incremented_wip():
    seen = []

    def mod(t, wip):
        seen.append(wip)
        return 0.1, 1.0 + 0.01 * wip

    d = TptDistribution(0.1, 1.0, modulation=mod)
    s = Realization.from_items([Item(0.5, 0.5, 0.0)] * 3, seed=0, accumulator=0.5)
    inject_arrivals(s, 0.0, 0.15, InfluxProfile.constant(20.0), d)
    # three whole arrivals (0.5 + 3.0): WIP seen as 4, 5, 6
    assert s.accumulator == pytest.approx(0.5)
    assert seen == [4.0, 5.0, 6.0]


def test_collect_exits_examples():
    s = Realization.from_items([Item(0.5, 1.0, 0.0), Item(1.001, 1.0, 0.2)])
    collect_exits(s, 1.2)
    assert s.wip == 1 and s.exit_log == [(1.2, 0.2)]
    assert s.realized_tpts() == pytest.approx([1.0])
    e = Realization.empty()
    collect_exits(e, 0.0)
    assert e.wip == 0 and e.exit_log == []


def test_advection_exactness(uniform_short, lam0):
    dt = 1e-3
    s = Realization.from_items([Item(0.0, 1.0, 0.0)], seed=0)
    k = 0
    while s.wip:
        micro_step(s, k * dt, dt, lam0, uniform_short)
        k += 1
    exit_time, _ = s.exit_log[0]
    assert abs(exit_time - 1.0) <= dt + 1e-12


def test_determinism(uniform_short, lam20):
    def run(seed):
        s = Realization.empty(seed=seed)
        for k in range(3000):
            micro_step(s, k * 1e-3, 1e-3, lam20, uniform_short)
        return s

    a, b = run(11), run(11)
    assert a.exit_log == b.exit_log
    assert np.array_equal(a.phase, b.phase) and np.array_equal(a.tpt, b.tpt)
    assert run(12).exit_log != a.exit_log


def test_monotone_phase(uniform_short, lam20):
    s = Realization.from_items([Item(0.0, 1.0, 0.0)], seed=9)
    last = 0.0
    for k in range(900):
        micro_step(s, k * 1e-3, 1e-3, lam20, uniform_short)
        assert s.phase[0] >= last
        last = s.phase[0]


def test_constant_tpt_reduction(lam20):
    dt = 1e-3
    d = TptDistribution.uniform(0.5, 0.5 + 1e-6)
    s = Realization.empty(seed=4)
    for k in range(3000):
        micro_step(s, k * dt, dt, lam20, d)
    tpts = s.realized_tpts()
    assert tpts.size > 40
    assert tpts.max() - tpts.min() < 2 * dt
    assert abs(tpts.mean() - 0.5) <= 2 * dt
