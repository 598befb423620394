"""Exception types shared across the package.

Everything derives from :class:`CarmaError` so callers can catch one base
class; the subclasses mirror the distinct failure modes of the numerical
pipeline (bad model, bad parameter vector, solver breakdown, bad data/grid).
"""


class CarmaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CarmaError, ValueError):
    """Matrix/vector shapes are inconsistent with the declared model."""


class StabilityError(CarmaError, ValueError):
    """A drift/transition matrix violates a required stability condition.

    Carries the offending eigenvalue in ``args[1]`` when available.
    """

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NotPositiveDefiniteError(CarmaError, ValueError):
    """A matrix required to be (semi)definite is not."""


class SingularMatrixError(CarmaError, ValueError):
    """A matrix that must be invertible is singular (or nearly so)."""


class ConvergenceError(CarmaError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class ParameterError(CarmaError, ValueError):
    """A parameter vector is outside its box or maps to an invalid model."""


class GridError(CarmaError, ValueError):
    """Observation times / sampling grids are inconsistent."""


class DataError(CarmaError, ValueError):
    """Input data is malformed (NaNs, wrong width, too short...)."""
