"""Experiment configuration and CSV / report emission.

Configurations are flat YAML mappings.  Every key is validated before any
simulation starts or any output directory is created; a bad key fails with
a message naming the field.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .distributions import InfluxProfile, TptDistribution
from .errors import ConfigError, InvalidDistributionError
from .observables import JointHistogram, Trajectory

__all__ = ["EXPERIMENTS", "REFERENCE_CASES", "CaseSpec", "ExperimentConfig", "load_config", "write_trajectory_csv",
           "write_histogram_csv", "write_rows_csv", "write_summary", "trajectory_header"]

EXPERIMENTS = ("slaving-study", "lift-test", "cpi-run", "direct-run", "pde-compare")

# influx (items/s), lower and upper TPT bound (s) of the nine reference cases
REFERENCE_CASES = {
    1: (0.5, 0.1, 2.0), 2: (10.0, 0.1, 2.0), 3: (20.0, 0.1, 2.0),
    4: (0.5, 0.1, 4.0), 5: (10.0, 0.1, 4.0), 6: (20.0, 0.1, 4.0),
    7: (0.5, 0.1, 8.0), 8: (10.0, 0.1, 8.0), 9: (20.0, 0.1, 8.0),
}


@dataclass(frozen=True)
class CaseSpec:
    """Constant influx with a uniform TPT law."""

    name: str
    influx: float
    lower: float
    upper: float

    @classmethod
    def reference(cls, number: int) -> "CaseSpec":
        lam, a, b = REFERENCE_CASES[number]
        return cls(f"case{number}", lam, a, b)

    @property
    def profile(self) -> InfluxProfile:
        return InfluxProfile.constant(self.influx)

    @property
    def dist(self) -> TptDistribution:
        return TptDistribution.uniform(self.lower, self.upper)


_COMMON = dict(seed=0, n_realizations=5000, dt=1e-3, M=8, record_every=0.1, outflux_window=0.5, out="results")

DEFAULTS: dict = {
    "slaving-study": dict(_COMMON, n_realizations=7000, cases=list(range(1, 10)), snapshot_time=16.0, nx=20, nr=30,
                          l1_threshold=0.15, independent_cases=[3, 5, 6, 8, 9],
                          dependence_pairs=[[1, 3], [4, 6], [7, 9]], dependence_ratio=2.0, r2_case=9,
                          r2_threshold=0.95),
    "lift-test": dict(_COMMON, case=9, t_interrupt=10.0, t_end=16.0, lift_seeds=[101, 202], tol=0.02,
                      rho_floor=0.1, interpolation="linear"),
    "cpi-run": dict(_COMMON, influx=20.0, tpt_lower=0.1, tpt_upper=2.0, t_end=10.0, dt_coarse=[0.2, 0.3],
                    burst_steps=20, fit_steps=[12, 14, 16, 18, 20], transient=3.0, tol=0.03,
                    interpolation="linear", reported_savings=0.783),
    "direct-run": dict(_COMMON, influx=20.0, tpt_lower=0.1, tpt_upper=2.0, t_end=16.0, little_tol=0.05),
    "pde-compare": dict(_COMMON, cases=[3, 1], t_end=10.0, pde_cells=200, tol=0.07),
}


def _fail(name: str, msg: str):
    raise ConfigError(f"config field '{name}': {msg}")


def _case(value, name) -> CaseSpec:
    if isinstance(value, bool):
        _fail(name, f"expected a case number or mapping, got {value!r}")
    if isinstance(value, int):
        if value not in REFERENCE_CASES:
            _fail(name, f"unknown reference case {value} (expected 1..9)")
        return CaseSpec.reference(value)
    if isinstance(value, Mapping):
        missing = {"influx", "tpt_lower", "tpt_upper"} - set(value)
        if missing:
            _fail(name, f"case mapping is missing {sorted(missing)}")
        spec = CaseSpec(str(value.get("name", "custom")), float(value["influx"]), float(value["tpt_lower"]),
                        float(value["tpt_upper"]))
        if spec.influx < 0:
            _fail(name, "influx must be non-negative")
        try:
            spec.dist
        except InvalidDistributionError as exc:
            _fail(name, str(exc))
        return spec
    _fail(name, f"expected a case number or mapping, got {value!r}")


@dataclass
class ExperimentConfig:
    """Validated experiment parameters; ``params`` holds the merged flat keys."""

    experiment: str
    params: dict = field(default_factory=dict)

    def __getattr__(self, item):
        params = self.__dict__.get("params", {})
        if item in params:
            return params[item]
        raise AttributeError(item)

    @classmethod
    def from_mapping(cls, data: Optional[Mapping[str, Any]], experiment: Optional[str] = None,
                     **overrides) -> "ExperimentConfig":
        data = dict(data or {})
        exp = data.pop("experiment", None) or experiment
        if experiment is not None and exp != experiment:
            _fail("experiment", f"config is for {exp!r} but {experiment!r} was requested")
        if exp not in EXPERIMENTS:
            _fail("experiment", f"expected one of {list(EXPERIMENTS)}, got {exp!r}")
        params = dict(DEFAULTS[exp])
        unknown = sorted(set(data) - set(params))
        if unknown:
            _fail(unknown[0], f"unknown key for experiment {exp!r}")
        params.update(data)
        params.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(exp, params)
        cfg.user_keys = set(data) | {k for k, v in overrides.items() if v is not None}
        cfg.validate()
        return cfg

    # -- validation -----------------------------------------------------
    def _positive(self, name, integer=False, allow_zero=False):
        v = self.params[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            _fail(name, f"expected a {'whole' if integer else 'real'} number, got {v!r}")
        if v < 0 or (v == 0 and not allow_zero):
            _fail(name, f"must be {'non-negative' if allow_zero else 'positive'}, got {v!r}")
        return v

    def validate(self):
        p = self.params
        if isinstance(p["seed"], bool) or not isinstance(p["seed"], int) or p["seed"] < 0:
            _fail("seed", f"expected a non-negative integer, got {p['seed']!r}")
        for name in ("n_realizations", "M"):
            self._positive(name, integer=True)
        if p["M"] < 2:
            _fail("M", "need at least 2 phase cells")
        for name in ("dt", "record_every", "outflux_window"):
            self._positive(name)
        if not isinstance(p["out"], (str, Path)):
            _fail("out", "expected a directory path")
        getattr(self, "_validate_" + self.experiment.replace("-", "_"))()

    def _validate_slaving_study(self):
        p = self.params
        if not isinstance(p["cases"], list) or not p["cases"]:
            _fail("cases", "need a non-empty list of cases")
        self.case_specs = [_case(c, "cases") for c in p["cases"]]
        for name in ("snapshot_time", "l1_threshold", "dependence_ratio", "r2_threshold"):
            self._positive(name)
        for name in ("nx", "nr"):
            self._positive(name, integer=True)
            if p[name] < 2:
                _fail(name, "need at least 2 bins")
        numbers = {c for c in p["cases"] if isinstance(c, int)}
        explicit = self.__dict__.get("user_keys", set())
        # default verdict lists shrink to the cases actually run; explicit ones must match
        if "independent_cases" not in explicit:
            p["independent_cases"] = [c for c in p["independent_cases"] if c in numbers]
        if "dependence_pairs" not in explicit:
            p["dependence_pairs"] = [pr for pr in p["dependence_pairs"] if set(pr) <= numbers]
        if "r2_case" not in explicit and p["r2_case"] not in numbers:
            p["r2_case"] = None
        for c in p["independent_cases"]:
            if c not in numbers:
                _fail("independent_cases", f"case {c} is not part of 'cases'")
        for pair in p["dependence_pairs"]:
            if not (isinstance(pair, list) and len(pair) == 2 and set(pair) <= numbers):
                _fail("dependence_pairs", f"pair {pair!r} must name two cases from 'cases'")
        if p["r2_case"] is not None and p["r2_case"] not in numbers:
            _fail("r2_case", f"case {p['r2_case']} is not part of 'cases'")

    def _validate_lift_test(self):
        p = self.params
        self.case_spec = _case(p["case"], "case")
        self._positive("t_interrupt")
        self._positive("t_end")
        self._positive("tol")
        if p["t_interrupt"] >= p["t_end"]:
            _fail("t_interrupt", f"must be before t_end ({p['t_interrupt']} >= {p['t_end']})")
        seeds = p["lift_seeds"]
        if not isinstance(seeds, list) or len(seeds) < 1 or not all(isinstance(s, int) for s in seeds):
            _fail("lift_seeds", "need a list of integer seeds")
        if p["interpolation"] not in ("linear", "cell"):
            _fail("interpolation", "expected 'linear' or 'cell'")

    def _influx_profile(self) -> InfluxProfile:
        v = self.params["influx"]
        try:
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                return InfluxProfile.constant(float(v))
            if isinstance(v, list):
                return InfluxProfile.from_pairs(v)
        except (ValueError, TypeError) as exc:
            _fail("influx", str(exc))
        _fail("influx", f"expected a rate or a list of [time, rate] pairs, got {v!r}")

    def _dist(self) -> TptDistribution:
        try:
            return TptDistribution.uniform(float(self.params["tpt_lower"]), float(self.params["tpt_upper"]))
        except (InvalidDistributionError, TypeError, ValueError) as exc:
            _fail("tpt_upper", str(exc))

    def _validate_cpi_run(self):
        p = self.params
        self.influx_profile = self._influx_profile()
        self.dist = self._dist()
        self._positive("t_end")
        self._positive("tol")
        self._positive("transient", allow_zero=True)
        self._positive("burst_steps", integer=True)
        dts = p["dt_coarse"]
        if not isinstance(dts, list) or not dts:
            _fail("dt_coarse", "need a non-empty list of coarse steps")
        burst = p["burst_steps"] * p["dt"]
        for v in dts:
            if not isinstance(v, (int, float)) or v < burst * (1 - 1e-12):
                _fail("dt_coarse", f"{v!r} is shorter than the burst ({burst:g} s)")
        fit = p["fit_steps"]
        if (not isinstance(fit, list) or len(fit) < 2 or any(b <= a for a, b in zip(fit, fit[1:]))
                or fit[-1] != p["burst_steps"]):
            _fail("fit_steps", "must be strictly increasing, length >= 2, ending at burst_steps")
        if p["interpolation"] not in ("linear", "cell"):
            _fail("interpolation", "expected 'linear' or 'cell'")

    def _validate_direct_run(self):
        self.influx_profile = self._influx_profile()
        self.dist = self._dist()
        self._positive("t_end")
        self._positive("little_tol")

    def _validate_pde_compare(self):
        p = self.params
        if not isinstance(p["cases"], list) or not p["cases"]:
            _fail("cases", "need a non-empty list of cases")
        self.case_specs = [_case(c, "cases") for c in p["cases"]]
        if any(c.influx <= 0 for c in self.case_specs):
            _fail("cases", "the density equation needs a positive influx")
        self._positive("t_end")
        self._positive("pde_cells", integer=True)
        self._positive("tol")

    def echo(self) -> str:
        """YAML rendering of the effective configuration."""
        return yaml.safe_dump({"experiment": self.experiment, **{k: (str(v) if isinstance(v, Path) else v)
                                                                 for k, v in self.params.items()}},
                              sort_keys=True)


def load_config(path, experiment: Optional[str] = None, **overrides) -> ExperimentConfig:
    """Read and validate a YAML configuration (``path=None`` gives the defaults)."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping of keys to values")
    return ExperimentConfig.from_mapping(data, experiment=experiment, **overrides)


# -- CSV ------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def trajectory_header(M: int) -> list:
    return ["t [s]", "wip [items]", "outflux [items/s]"] + [f"rho_{j} [items/phase]" for j in range(M + 1)]


def write_rows_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_trajectory_csv(path, traj: Trajectory):
    """One row per recorded time: ``t, wip, outflux, rho_0 .. rho_M`` (same schema for every source)."""
    M = traj.densities.shape[1] - 1
    rows = (([t, w, f] + list(d)) for t, w, f, d in zip(traj.times, traj.wip, traj.outflux, traj.densities))
    return write_rows_csv(path, trajectory_header(M), rows)


def write_histogram_csv(path, hist: JointHistogram):
    """Long-form conditional densities; empty phase rows are written as ``nan``."""
    cond = hist.conditional()
    rows = ((hist.time, i, k, cond[i, k]) for i in range(hist.nx) for k in range(hist.nr))
    return write_rows_csv(path, ["t [s]", "x_bin", "r_bin", "density [1/s]"], rows)


def write_summary(path, lines) -> Path:
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def config_fields() -> dict:
    """Default keys per experiment (used by the CLI help)."""
    return {k: dict(v) for k, v in DEFAULTS.items()}

