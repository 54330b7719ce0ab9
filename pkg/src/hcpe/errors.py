"""Exception and warning types raised across the package."""


class GridMismatchError(ValueError):
    """A field's shape does not match the grid it is used with."""


class DegeneracyError(ArithmeticError):
    """A divisor came within the positivity guard of zero."""


class RegimeError(RuntimeError):
    """A field left the small-perturbation regime around the equilibrium.

    ``field`` names the offending quantity and ``location`` holds the index of
    the worst node, so callers can report where the violation happened.
    """

    def __init__(self, message, field=None, location=None, time=None):
        super().__init__(message)
        self.field = field
        self.location = location
        self.time = time


class NonContractionError(RuntimeError):
    """The fixed-point iteration stopped contracting."""

    def __init__(self, message, ratios):
        super().__init__(message)
        self.ratios = list(ratios)


class ConvergenceError(RuntimeError):
    """An inner iteration (e.g. map inversion) did not reach its tolerance."""


class TranscriptionAuditWarning(UserWarning):
    """Term-by-term remainder evaluation disagrees with the defining identity."""
