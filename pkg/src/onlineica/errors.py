"""Exception types shared across the package."""


class OnlineICAError(Exception):
    pass


class DomainError(OnlineICAError, ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class ConfigError(OnlineICAError, ValueError):
    pass


class NumericError(OnlineICAError, ArithmeticError):
    """Base class for failures of a numerical procedure at run time."""


class DegenerateStateError(NumericError):
    pass


class SingularPotentialError(NumericError):
    pass


class IntegratorError(NumericError):
    pass


class StepSizeError(NumericError):
    pass


class DomainTooSmallError(NumericError):
    pass
