"""Exception hierarchy shared across the package.

Errors fall into three categories that the command line maps to exit codes:
configuration (2), data (3), numeric divergence (4).
"""


class CompatLearnError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CompatLearnError):
    """Invalid configuration: bad capacity, inconsistent dimensions, unknown keys."""


class DataError(CompatLearnError):
    """Invalid or corrupt data: malformed files, bad labels, duplicate ids."""


class DivergenceError(CompatLearnError):
    """Training produced non-finite values."""


class DegenerateFeatureError(DataError):
    """A zero-norm feature vector appeared where a direction is required."""


class DisjointnessError(DataError):
    """Class sets that must be disjoint overlap."""


class CorruptFileError(DataError):
    """A serialized artifact failed checksum, magic, or structural validation."""


class UnsupportedVersionError(DataError):
    """A serialized artifact declares a format version newer than this build."""


class MetricUndefinedError(CompatLearnError):
    """A summary metric was requested where it is mathematically undefined."""
