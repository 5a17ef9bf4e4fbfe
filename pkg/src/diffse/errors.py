"""Exception hierarchy shared by all modules.

The CLI maps each family onto its own exit code.
"""


class DiffseError(Exception):
    """Base class for package errors."""


class DomainError(DiffseError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularTimeError(DomainError):
    """Raised when a quantity is undefined at zero noise level (t = 0)."""


class DimensionError(DiffseError, ValueError):
    """Array shapes do not agree."""


class ConfigError(DiffseError, ValueError):
    """Invalid configuration, manifest or command-line combination."""


class DataError(DiffseError):
    """Missing or malformed audio / model / index files."""


class DegenerateInputError(DataError, ValueError):
    """Input that carries no usable signal (e.g. an all-zero impulse response)."""
