"""Exception types raised across the package."""


class SDTError(Exception):
    """Base class for all package errors."""


class DomainError(SDTError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(SDTError, ValueError):
    """Inputs have incompatible supports or shapes."""


class EvaluationError(SDTError, ArithmeticError):
    """A numerical evaluation produced a non-finite or invalid value."""


class DataError(SDTError, ValueError):
    """Observed data are malformed or fall outside the model support."""


class UnsupportedOperation(SDTError, TypeError):
    """The operation is not defined for this kind of model."""


class ConvergenceError(SDTError, RuntimeError):
    """An optimizer failed to converge.

    The best iterate found is kept in ``best`` (a ``FitResult`` or None).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateVarianceError(SDTError, ArithmeticError):
    """An asymptotic variance is zero or negative."""
