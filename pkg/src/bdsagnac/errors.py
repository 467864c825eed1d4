"""Exception hierarchy shared by all modules.

Every error maps onto one CLI exit code: data problems exit 3, numerical
problems exit 4.
"""


class BDSagnacError(Exception):
    """Base class for all package errors."""

    exit_code = 4
    kind = "error"


class DatabaseError(BDSagnacError):
    """Malformed or unsupported material database content."""

    exit_code = 3
    kind = "database"


class RangeError(BDSagnacError, ValueError):
    """Argument outside the domain where a model is defined."""

    kind = "range"


class DomainError(BDSagnacError, ValueError):
    """Non-physical input (negative width, index <= 0, arcsin overflow...)."""

    kind = "domain"


class DegenerateInputError(BDSagnacError, ValueError):
    """Input that makes a ratio or a regression undefined."""

    kind = "degenerate"


class IncompleteDataError(BDSagnacError, ValueError):
    """A required measurement basis or column is missing."""

    exit_code = 3
    kind = "incomplete"


class GapError(BDSagnacError, ValueError):
    """Invalid samples inside the range an estimator needs."""

    kind = "gap"


class ConvergenceError(BDSagnacError, RuntimeError):
    """Iterative fit stopped without converging.

    The best parameters reached so far are kept on ``best``.
    """

    kind = "convergence"

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DataFormatError(BDSagnacError, ValueError):
    """Input file that cannot be parsed into the expected records."""

    exit_code = 3
    kind = "data"
