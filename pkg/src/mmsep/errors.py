"""Exception hierarchy shared across the package.

CLI exit codes map onto these: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericsError -> 4.
"""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with an operation's contract."""


class ConfigError(ValueError):
    """Invalid configuration value or key."""


class DataError(ValueError):
    """A data file or sample violates its schema or preconditions."""


class FormatError(DataError):
    """A binary/text file does not match its declared format."""


class DegenerateInputError(DataError):
    """Input is technically well-formed but meaningless (e.g. all-zero)."""


class NumericsError(RuntimeError):
    """Non-finite values or a numerically failed operation."""
