"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so raise the most specific
one that applies.
"""


class DispChartsError(Exception):
    """Base class for all package errors."""


class ConfigError(DispChartsError):
    """Inconsistent or out-of-range chart/simulation configuration."""


class DataError(DispChartsError):
    """Malformed or unusable input data (CSV parsing, sequencing, singularity)."""


class NumericsError(DispChartsError):
    """A numerical primitive could not complete (failed decomposition, domain error)."""


class CalibrationError(DispChartsError):
    """Stochastic root finding could not bracket or converge on the target."""
