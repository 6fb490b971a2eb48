"""Exception hierarchy shared across the package.

Three failure classes map to distinct CLI exit codes: configuration
problems (bad shapes, bad hyperparameters), data problems (malformed
files, invariant violations in records), and numeric problems
(non-finite values, undefined statistics, failed gradient checks).
"""


class MeltshiftError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MeltshiftError):
    """Invalid configuration: shape mismatches, bad hyperparameter values."""


class DataError(MeltshiftError):
    """Invalid data: malformed records, missing tracks, broken files."""


class FormatError(DataError):
    """A binary or text artifact does not match its documented layout."""


class NumericError(MeltshiftError):
    """Numeric failure: non-finite values or undefined statistics."""


class StateError(MeltshiftError):
    """Operation called in the wrong order, e.g. backward before forward."""
