"""Exception types raised across the package."""


class GpBoldError(Exception):
    """Base class for package errors."""


class DegenerateInputError(GpBoldError, ValueError):
    """Input for which the requested quantity is undefined (zero vector, zero variance, ...)."""


class ShapeError(GpBoldError, ValueError):
    """Array dimensions do not satisfy an operation's contract."""


class NumericalError(GpBoldError, ArithmeticError):
    """A numerical routine failed (factorization, rejection cap, degenerate slice)."""
