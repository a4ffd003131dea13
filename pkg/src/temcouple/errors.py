"""Exception hierarchy shared by all temcouple modules.

The CLI maps these onto process exit codes: config problems exit with 2,
numerical failures with 3, and failed acceptance checks with 1.
"""


class TemcoupleError(Exception):
    """Base class for all library errors."""


class InputError(TemcoupleError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(TemcoupleError):
    """Invalid or inconsistent experiment configuration."""


class CalibrationError(TemcoupleError):
    """Parameter calibration could not produce a consistent result."""


class ConstructionError(TemcoupleError):
    """A constructed object failed its own invariant checks."""


class NumericalError(TemcoupleError):
    """A simulation produced non-finite or out-of-range values."""
