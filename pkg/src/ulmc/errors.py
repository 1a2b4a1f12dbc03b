"""Exception types shared across the package."""


class UlmcError(Exception):
    """Base class for all errors raised by this package."""


class InvalidTargetError(UlmcError):
    """Target construction arguments violate the required assumptions."""


class UnsupportedTargetError(UlmcError):
    """Operation requires a target class the given target does not belong to."""


class DatasetFormatError(UlmcError):
    """Dataset file is malformed or uses an unrecognized label alphabet."""


class ScheduleError(UlmcError):
    """Step size, iteration count or fixed-point depth out of range."""


class ConfigError(UlmcError):
    """Run configuration is inconsistent or incomplete."""
