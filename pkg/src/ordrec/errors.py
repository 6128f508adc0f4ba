class OrdrecError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 2


class DataError(OrdrecError, ValueError):
    """Malformed input, validation or integrity failure."""

    exit_code = 2


class DivergenceError(OrdrecError, ArithmeticError):
    """Training or optimisation produced non-finite values."""

    exit_code = 3
