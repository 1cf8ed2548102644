"""Exception hierarchy shared by all rpce modules."""


class RpceError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(RpceError, ValueError):
    """An argument violates a documented precondition."""


class NumericalFailureError(RpceError):
    """An iterative numerical routine broke down or hit its iteration cap."""


class BracketError(InvalidArgumentError):
    """A root bracket does not contain a sign change."""


class CapacityError(InvalidArgumentError):
    """A requested basis would exceed the configured size cap."""


class InfeasibleEpsilonError(RpceError):
    """The residual constraint is below the attainable least-squares minimum."""


class CrossValidationError(RpceError):
    """No cross-validation candidate produced a feasible solve."""


class DegenerateOutputError(RpceError):
    """Outputs carry no usable signal (e.g. constant, or zero reference norm)."""


class ConfigError(RpceError):
    """An experiment configuration document is malformed."""


class PartialResultsError(RpceError):
    """Too many replicate cells failed; the report is incomplete."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RankDeficiencyWarning(UserWarning):
    """A requested reduction exceeds the numerical rank of the gradient matrix."""
