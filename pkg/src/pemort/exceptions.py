"""Exception hierarchy shared by all pemort modules.

Each class carries an ``exit_code`` used by the command-line front end.
"""


class MortalityError(Exception):
    """Base class for every error raised by pemort."""

    exit_code = 1


class InputError(MortalityError, OSError):
    """Missing or unwritable file."""

    exit_code = 2


class DataError(MortalityError, ValueError):
    """Input data violates a structural or value invariant."""

    exit_code = 3


class ParseError(DataError):
    """Malformed CSV or key-value row."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ShapeError(DataError):
    """Two grids do not share the same age/year axes."""


class UnderdeterminedError(DataError):
    """Too few observations for the requested estimate."""


class ConvergenceError(MortalityError):
    """A fit did not converge where convergence is required."""

    exit_code = 4

    def __init__(self, message, years=()):
        super().__init__(message)
        self.years = tuple(years)


class NumericError(MortalityError, ArithmeticError):
    """Non-finite or otherwise invalid floating-point result."""

    exit_code = 5


class ModelOverflowError(NumericError):
    """Hump term exponent is too large to evaluate in double precision."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class DomainError(NumericError):
    """Parameter trend evaluated outside its admissible range."""
