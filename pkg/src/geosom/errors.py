"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GeosomError(Exception):
    exit_code = 1


class ValidationError(GeosomError, ValueError):
    """Bad arguments or configuration; raised before any work is done."""

    exit_code = 2


class DataError(GeosomError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class NumericalError(GeosomError, ArithmeticError):
    """Non-finite values or a degenerate numerical problem."""

    exit_code = 4


class DegenerateClusteringError(NumericalError):
    """Index undefined for this partition (e.g. all clusters are singletons)."""
