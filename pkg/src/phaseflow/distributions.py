"""Throughput-time (TPT) distributions and influx profiles.

Two families are built in, both supported on ``[lower, upper]`` with ``lower > 0``:

* ``uniform`` -- constant density.
* ``linear``  -- density varying linearly across the support, shaped by
  ``slope`` in ``[-1, 1]``: in the standardized coordinate ``z = (r - a)/(b - a)``
  the density is ``1 + slope * (2 z - 1)``.

A distribution may carry a *modulation*: a callable ``(t, wip) -> (a, b)``
that moves the support with time and/or work in progress while keeping the
shape.  ``wip`` may be a scalar or an array (one entry per realization), so
modulations should be written with numpy operations.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import DomainError, InvalidDistributionError

__all__ = ["TptDistribution", "InfluxProfile", "WipLinearModulation", "Moments", "KINDS"]

KINDS = ("uniform", "linear")

Modulation = Callable[[float, object], tuple]


@dataclass(frozen=True)
class Moments:
    """Moments ``T_i = int r^i T(r) dr`` for ``i = -1, 1, 2``."""

    t_m1: float
    t_1: float
    t_2: float
    time: float = 0.0

    @property
    def variance(self) -> float:
        return self.t_2 - self.t_1 ** 2


@dataclass(frozen=True)
class WipLinearModulation:
    """Support that widens with WIP: ``upper = upper0 + gain * wip``.

    The lower bound stays fixed, as in the experiments where only the upper
    limit of the support is observed to move.
    """

    lower: float
    upper0: float
    gain: float

    def __call__(self, t, wip):
        wip = np.asarray(wip, dtype=float)
        upper = self.upper0 + self.gain * wip
        lower = np.full_like(upper, self.lower)
        if upper.ndim == 0:
            return float(lower), float(upper)
        return lower, upper


def _shape_cdf(z, slope):
    return z + slope * (z * z - z)


def _shape_ppf(u, slope):
    # root of slope*z^2 + (1-slope)*z - u = 0 in [0, 1], written without cancellation
    u = np.asarray(u, dtype=float)
    c = 1.0 - slope
    denom = c + np.sqrt(c * c + 4.0 * slope * u)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0.0, 2.0 * u / denom, 0.0)


@dataclass(frozen=True)
class TptDistribution:
    """Probability law of the throughput time of an item.

    Parameters
    ----------
    lower, upper : float
        Support ``[lower, upper]`` in seconds, ``upper > lower > 0``.  With a
        modulation these are the nominal (time/WIP independent) bounds.
    kind : {"uniform", "linear"}
    slope : float
        Shape parameter of the ``linear`` family; ignored for ``uniform``.
    modulation : callable, optional
        ``(t, wip) -> (a, b)`` giving the support at time ``t`` and WIP ``wip``.
    """

    lower: float
    upper: float
    kind: str = "uniform"
    slope: float = 0.0
    modulation: Optional[Modulation] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidDistributionError(f"unknown distribution kind {self.kind!r}; expected one of {KINDS}")
        _check_support(self.lower, self.upper)
        if self.kind == "uniform" and self.slope != 0.0:
            object.__setattr__(self, "slope", 0.0)
        if not -1.0 <= self.slope <= 1.0:
            raise InvalidDistributionError(f"linear slope must lie in [-1, 1], got {self.slope}")

    @classmethod
    def uniform(cls, lower: float, upper: float) -> "TptDistribution":
        return cls(lower=lower, upper=upper)

    @property
    def is_modulated(self) -> bool:
        return self.modulation is not None

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def bounds(self, t: float = 0.0, wip=0.0):
        """Support ``(a, b)`` at time ``t`` and WIP ``wip`` (arrays if ``wip`` is)."""
        if self.modulation is None:
            return self.lower, self.upper
        a, b = self.modulation(t, wip)
        _check_support(a, b)
        return a, b

    def at(self, t: float = 0.0, wip: float = 0.0) -> "TptDistribution":
        """Freeze the modulation at ``(t, wip)`` into a static distribution."""
        if self.modulation is None:
            return self
        a, b = self.bounds(t, float(wip))
        return replace(self, lower=float(a), upper=float(b), modulation=None)

    # -- density, CDF, sampling (static part) --------------------------------

    def pdf(self, r):
        r = np.asarray(r, dtype=float)
        z = (r - self.lower) / self.width
        inside = (r >= self.lower) & (r <= self.upper)
        vals = (1.0 + self.slope * (2.0 * z - 1.0)) / self.width
        return np.where(inside, vals, 0.0)

    def cdf(self, r):
        z = np.clip((np.asarray(r, dtype=float) - self.lower) / self.width, 0.0, 1.0)
        return _shape_cdf(z, self.slope)

    def ppf(self, u):
        return self.lower + self.width * _shape_ppf(u, self.slope)

    def sample(self, rng: np.random.Generator, size=None, lower=None, upper=None):
        """Draw TPTs; ``lower``/``upper`` may be per-draw arrays of support bounds."""
        a = self.lower if lower is None else lower
        b = self.upper if upper is None else upper
        u = rng.random(size)
        return a + (b - a) * _shape_ppf(u, self.slope)

    # -- moments ---------------------------------------------------------------

    def moments(self, t: float = 0.0, wip=0.0) -> Moments:
        """Closed-form moments at ``(t, wip)`` (scalar ``wip``)."""
        a, b = self.bounds(t, wip)
        t_m1, t_1, var = self._closed_moments(a, b)
        return Moments(t_m1=float(t_m1), t_1=float(t_1), t_2=float(t_1 * t_1 + var), time=t)

    def t_minus_one(self, t: float = 0.0, wip=0.0):
        """``T_-1`` at ``(t, wip)``; vectorized over array ``wip``."""
        a, b = self.bounds(t, wip)
        return self._closed_moments(a, b)[0]

    def _closed_moments(self, a, b):
        # standardized z = (r - a)/w with shape density (1 - s) + 2 s z
        s = self.slope
        a = np.asarray(a, dtype=float)
        w = np.asarray(b, dtype=float) - a
        ez = 0.5 + s / 6.0
        ez2 = 1.0 / 3.0 + s / 6.0
        t_1 = a + w * ez
        var = w * w * (ez2 - ez * ez)
        log_ratio = np.log1p(w / a)
        t_m1 = (1.0 - s) * log_ratio / w
        if s != 0.0:
            t_m1 = t_m1 + (2.0 * s / w) * (1.0 - (a / w) * log_ratio)
        if t_m1.ndim == 0:
            return float(t_m1), float(t_1), float(var)
        return t_m1, t_1, var

    def moments_quad(self, t: float = 0.0, wip=0.0, tol: float = 1e-12) -> Moments:
        """Moments by adaptive quadrature; an independent check on the closed forms."""
        static = self.at(t, wip)

        def moment(k):
            val, _ = integrate.quad(lambda r: r ** k * float(static.pdf(r)), static.lower, static.upper,
                                    epsabs=tol, epsrel=tol, limit=200)
            return val

        return Moments(t_m1=moment(-1), t_1=moment(1), t_2=moment(2), time=t)

    # -- length-biased law r T(r) / T_1 ------------------------------------------

    @property
    def _mean(self) -> float:
        return self._closed_moments(self.lower, self.upper)[1]

    def length_biased_pdf(self, r):
        r = np.asarray(r, dtype=float)
        return r * self.pdf(r) / self._mean

    def length_biased_cdf(self, r):
        z = np.clip((np.asarray(r, dtype=float) - self.lower) / self.width, 0.0, 1.0)
        s = self.slope
        h = (1.0 - s) * z * z / 2.0 + 2.0 * s * z ** 3 / 3.0
        return (self.lower * _shape_cdf(z, s) + self.width * h) / self._mean

    def length_biased_ppf(self, u):
        """Inverse CDF of the length-biased law; closed form for ``uniform``."""
        u = np.asarray(u, dtype=float)
        a, b = self.lower, self.upper
        if self.slope == 0.0:
            return np.sqrt(a * a + u * (b * b - a * a))
        # monotone cubic in z: bisection to machine precision
        lo = np.zeros_like(u)
        hi = np.ones_like(u)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.length_biased_cdf(a + self.width * mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return a + self.width * 0.5 * (lo + hi)


def _check_support(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        raise InvalidDistributionError("distribution support must be finite")
    if np.any(a <= 0.0):
        raise InvalidDistributionError(f"lower support bound must be > 0 (T_-1 diverges otherwise), got {a.min()}")
    if np.any(b <= a):
        raise InvalidDistributionError("upper support bound must exceed the lower bound")


@dataclass(frozen=True)
class InfluxProfile:
    """Piecewise-linear influx ``lambda(t)`` in items/second.

    Linear interpolation between knots and constant extrapolation outside
    the table.
    """

    times: tuple
    rates: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        rates = tuple(float(r) for r in self.rates)
        if not times or len(times) != len(rates):
            raise DomainError("influx table needs matching, non-empty time and rate columns")
        if any(r < 0.0 or not np.isfinite(r) for r in rates):
            raise DomainError("influx rates must be finite and non-negative")
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise DomainError("influx table times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def constant(cls, rate: float) -> "InfluxProfile":
        return cls((0.0,), (rate,))

    @classmethod
    def from_pairs(cls, pairs) -> "InfluxProfile":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def __call__(self, t):
        val = np.interp(t, self.times, self.rates)
        return float(val) if np.ndim(val) == 0 else val

    @property
    def is_constant(self) -> bool:
        return len(set(self.rates)) == 1
