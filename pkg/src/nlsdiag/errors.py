"""Exception hierarchy shared across the package."""


class NlsdiagError(Exception):
    """Base class for all package errors."""


class NonFiniteFieldError(NlsdiagError, ValueError):
    """A field contains NaN or Inf entries."""


class DomainError(NlsdiagError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class GridMismatchError(NlsdiagError, ValueError):
    """Two fields that must share a grid do not."""


class ConfigError(NlsdiagError, ValueError):
    """Invalid configuration or specification data."""


class StepSizeError(NlsdiagError, RuntimeError):
    """The exact nonlinear substep hit its closed-form singularity; retry with smaller dt."""


class SolverAbortError(NlsdiagError, RuntimeError):
    """The evolution produced non-finite values; carries the partial trajectory."""

    def __init__(self, message, trajectory=None, t_last=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.t_last = t_last


class WindowCoverageError(NlsdiagError, ValueError):
    """A requested time window is not covered by the recorded snapshots."""


class ScopeError(NlsdiagError, ValueError):
    """A diagnostic was requested outside the parameter range it supports."""


class TruncationLevelError(NlsdiagError, ValueError):
    """A truncation level left nothing behind (e.g. the whole spectrum was cut)."""
