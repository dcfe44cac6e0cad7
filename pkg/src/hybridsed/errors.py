"""Exception hierarchy shared by all stages.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class SedError(Exception):
    """Base class for all package errors."""


class DataError(SedError, ValueError):
    """Malformed, missing or inconsistent input data."""


class NumericalError(SedError, ArithmeticError):
    """Non-finite values produced during training or inference."""
