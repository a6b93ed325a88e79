"""Equation-free simulation of re-entrant production lines in phase space.

The fine model moves items through a normalised phase ``x`` in ``[0, 1)`` at
speed ``1 / tau`` and redraws each item's throughput-time estimate ``tau``
at random.  Ensembles of that model are restricted to a coarse phase density
on ``M + 1`` nodes, lifted back to items, and advanced with coarse projective
integration.  A closed advection-diffusion equation for the density serves
as a deterministic reference.
"""
from .cpi import CpiConfig, cpi_step, lsq_slope, project, run_cpi, step_verify
from .distributions import InfluxProfile, Moments, TptDistribution, WipLinearModulation
from .ensemble import (EnsembleState, estimate_conditional, evolve, restrict_density, run_direct,
                       slaving_diagnostic, wip_and_outflux)
from .errors import (CoefficientError, ComparisonError, ConfigError, DiagnosticUndefinedError, DomainError,
                     InvalidDistributionError, NoMassError, PhaseflowError, SingularFitError, StepSizeError)
from .lifting import LiftSpec, integer_split, lift, phase_sampler, tpt_sampler
from .model import Item, Realization, collect_exits, inject_arrivals, micro_step, omega
from .observables import JointHistogram, PhaseDensity, Trajectory
from .pde import coefficients, constitutive_f, moments, solve_density_pde

__version__ = "0.1.0"
