"""Exception hierarchy shared across the package.

Each class maps to a distinct process exit code in the CLI so that batch
drivers can tell configuration mistakes, bad input files, and numerical
failures apart.
"""


class LpformError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(LpformError):
    """Invalid configuration: bad value, unknown key, violated precondition."""

    exit_code = 2


class DataError(LpformError):
    """Unreadable or malformed input data (edge lists, features, splits)."""

    exit_code = 3


class NumericError(LpformError):
    """Runtime numerical failure: NaN loss, failed gradient check, stalled sampler."""

    exit_code = 4
