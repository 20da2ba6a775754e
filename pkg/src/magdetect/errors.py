"""Exception hierarchy shared by all modules.

Every numerical failure derives from ``NumericalError`` so that the command
line front end can map it to a single exit code.
"""


class ArtifactError(Exception):
    """Base class for all package errors."""


class ArgumentError(ArtifactError, ValueError):
    """Invalid argument value or combination."""


class ConfigError(ArgumentError):
    """Scenario configuration failed validation."""


class GeometryError(ArgumentError):
    """Surfaces overlap, intersect or are otherwise inadmissible."""


class DomainError(ArgumentError):
    """Point lies outside the region where an expression is valid."""


class ContrastError(ArgumentError):
    """Permeability contrast is degenerate (mu equals mu0)."""


class NumericalError(ArtifactError, ArithmeticError):
    """Base class for failures of a numerical procedure."""


class SingularityError(NumericalError):
    """Kernel evaluated at (or on) its singularity."""


class ResourceError(NumericalError):
    """Requested discretization exceeds the memory budget."""


class SolveError(NumericalError):
    """Dense solve failed; carries the condition estimate."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConditioningError(SolveError):
    """Matrix is too ill-conditioned for a trustworthy solve."""


class CoverageError(NumericalError):
    """Samples do not cover the sphere well enough for a projection."""


class ConvergenceError(NumericalError):
    """Iteration cap reached; carries the best state found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ModelInconsistencyError(NumericalError):
    """Fitted quantity lies outside the range attainable by the model."""


class DegenerateDataError(NumericalError):
    """Data carry no information about the requested quantity."""
