"""Exception types shared across the package."""


class DipoleCrbError(Exception):
    """Base class for all package errors."""


class NonFinite(DipoleCrbError, ArithmeticError):
    """An integrand or model evaluation produced NaN or Inf."""


class AccuracyNotReached(DipoleCrbError):
    """Adaptive quadrature exhausted its cell budget.

    The best available estimate is attached as ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateGeometry(DipoleCrbError, ValueError):
    """Observation point coincides with the source, or the source is not in front of the surface."""


class SingularInformation(DipoleCrbError, ArithmeticError):
    """A Fisher block is too ill-conditioned to invert meaningfully."""

    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class EmptyGrid(DipoleCrbError, ValueError):
    """Receiver grid would contain no elements (L <= wavelength)."""


class NoConvergence(DipoleCrbError):
    """Local likelihood refinement stalled before meeting its tolerance."""
