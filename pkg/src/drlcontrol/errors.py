"""Exception types shared across the package."""


class DrlControlError(Exception):
    """Base class for all errors raised by drlcontrol."""


class InvalidShapeError(DrlControlError, ValueError):
    pass


class InvalidParameterError(DrlControlError, ValueError):
    pass


class NumericOverflowError(DrlControlError, ArithmeticError):
    pass


class ContractViolation(DrlControlError, RuntimeError):
    pass


class InsufficientDataError(DrlControlError, RuntimeError):
    pass


class InsufficientHistoryError(DrlControlError, ValueError):
    pass


class NonConvergenceError(DrlControlError, RuntimeError):
    pass


class ConfigError(DrlControlError, ValueError):
    """Configuration could not be parsed or validated.

    ``key`` names the offending ``section.option`` when one is known.
    """

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)
