"""Exception types shared across the package."""


class M2HError(Exception):
    """Base class for all package errors."""


class ConfigError(M2HError, ValueError):
    """Invalid model, loss or run configuration."""


class DimensionError(M2HError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class DomainError(M2HError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class DataError(M2HError, ValueError):
    """Labels or targets are malformed (out-of-range ids, empty masks, ...)."""


class UsageError(M2HError, RuntimeError):
    """API misuse, e.g. calling backward on a non-scalar tensor."""


class DatasetIOError(M2HError, OSError):
    """A dataset file is missing, unreadable or corrupt; the message names the path."""
