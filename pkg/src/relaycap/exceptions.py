"""Exception types raised by relaycap."""


class RelayCapError(Exception):
    """Base class for all package errors."""


class DomainError(RelayCapError, ValueError):
    """An argument lies outside the domain of the requested function."""


class ConvergenceError(RelayCapError, ArithmeticError):
    """A numerical expectation did not reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class SaturationError(RelayCapError, ArithmeticError):
    """A delay exponent target exceeds the supremum of the exponent function."""

    def __init__(self, message, supremum):
        super().__init__(message)
        self.supremum = supremum


class NumericalFailure(RelayCapError, ArithmeticError):
    """A boundary search terminated without locating the required root."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
