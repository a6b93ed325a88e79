"""Exception types raised across the package."""


class PhaseflowError(Exception):
    """Base class for all package errors."""


class DomainError(PhaseflowError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InvalidDistributionError(PhaseflowError, ValueError):
    """A throughput-time distribution has degenerate or non-positive support."""


class StepSizeError(PhaseflowError, RuntimeError):
    """The micro time step makes a resampling probability exceed one."""


class NoMassError(PhaseflowError, ValueError):
    """A density carries no mass, so it cannot be sampled."""


class DiagnosticUndefinedError(PhaseflowError, ValueError):
    """A diagnostic has no data to act on (e.g. every histogram row is empty)."""


class SingularFitError(PhaseflowError, ValueError):
    """A least-squares fit is singular (repeated abscissae)."""


class CoefficientError(PhaseflowError, ValueError):
    """Closure coefficients are undefined for the requested state."""


class ComparisonError(PhaseflowError, ValueError):
    """Two trajectories cannot be compared (e.g. disjoint time ranges)."""


class ConfigError(PhaseflowError, ValueError):
    """An experiment configuration failed validation."""
