"""Exception hierarchy shared by every package in the project."""


class EntropicTimeError(Exception):
    """Base class for all errors raised by this project."""


class DomainError(EntropicTimeError, ValueError):
    """Input lies outside the domain of a process, distribution or builder."""


class TimeChangeError(EntropicTimeError, ValueError):
    """A time change is not monotone or does not map into the target domain."""


class DegenerateCurveError(EntropicTimeError, ValueError):
    """An entropy curve cannot be built because the error table is identically zero."""


class FlatCurveError(EntropicTimeError, ValueError):
    """A curve is flat inside the range a schedule needs to invert."""


class UnsupportedDistributionError(EntropicTimeError, TypeError):
    """The operation is not defined for this kind of distribution."""


class ConfigError(EntropicTimeError, ValueError):
    """Malformed configuration, schema violation or bad input file row."""
