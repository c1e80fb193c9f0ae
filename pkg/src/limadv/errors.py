"""Exception types shared across the package."""


class LimAdvError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LimAdvError, ValueError):
    pass


class CapacityError(LimAdvError):
    """Problem size exceeds what an exact routine is allowed to enumerate."""


class InfeasibleError(LimAdvError):
    """A requested object (balanced control, LP optimum) does not exist."""


class UnsupportedRegimeError(LimAdvError):
    pass


class NumericalError(LimAdvError):
    """An internal solver returned something that fails its own certificate."""
