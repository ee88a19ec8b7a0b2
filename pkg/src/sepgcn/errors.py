"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: InputDataError -> 2,
ConfigError -> 3, NumericalError -> 4.
"""


class SepGcnError(Exception):
    """Base class for all package errors."""


class InputDataError(SepGcnError):
    """Raw data is missing, malformed beyond tolerance, or empty after filtering."""


class ConfigError(SepGcnError):
    """Configuration values are invalid or mutually inconsistent."""


class NumericalError(SepGcnError):
    """A numerical invariant was violated (NaN/Inf, degenerate statistic)."""
