"""Exception types and process exit codes shared across the package."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCHEMA = 3
EXIT_INTERNAL = 4


class TripmatchError(Exception):
    """Base class for all package errors."""

    exit_code = EXIT_INTERNAL


class ConfigError(TripmatchError):
    """Invalid configuration (bad key, bad value, unresolvable path)."""

    exit_code = EXIT_CONFIG


class SchemaError(TripmatchError):
    """Input file does not conform to its documented schema."""

    exit_code = EXIT_SCHEMA


class InvariantError(TripmatchError):
    """An internal invariant was violated; indicates a bug, not bad input."""

    exit_code = EXIT_INTERNAL


class EmptyNameError(ValueError):
    """Endpoint name is blank after trimming."""


class MissingEndpointError(ValueError):
    """A diary leg lacks the station/line field its mode requires."""


class BrokenLinkError(ValueError):
    """A linkage row references a respondent, card, or journey that does not exist."""


class EmptySampleError(ValueError):
    """A statistic was requested on an empty sample."""


class NonFiniteValueError(ValueError):
    """Sample contains NaN or infinity."""


class AllValuesIdenticalError(ValueError):
    """Rank test undefined: every observation is tied with every other."""


class AllZeroDifferencesError(ValueError):
    """Signed-rank test undefined: every pair difference is zero."""


class SampleSizeOutOfRangeError(ValueError):
    """Sample size outside the validity range of the requested method."""


class ZeroVarianceError(ValueError):
    """Sample is constant where variation is required."""


class DegenerateVarianceError(ValueError):
    """Correlation undefined: one of the variables has zero variance."""
