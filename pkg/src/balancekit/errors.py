"""Exception types shared across the package."""


class BalancekitError(Exception):
    """Base class for all package errors."""


class DataError(BalancekitError):
    """Invalid or malformed input data."""


class ConfigError(BalancekitError):
    """Invalid configuration (unknown keys, bad values)."""


class SeparationError(BalancekitError):
    """Perfect separation detected during logistic fitting."""


class ConvergenceError(BalancekitError):
    """An iterative fit failed to converge."""


class DegenerateDirectionError(BalancekitError):
    """A balance direction has zero sample variance of its score."""
