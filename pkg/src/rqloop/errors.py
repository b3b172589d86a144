"""Exception hierarchy shared by every module."""


class RQLoopError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(RQLoopError, ValueError):
    """Matrix or vector shapes are incompatible."""


class SingularMatrixError(RQLoopError, ArithmeticError):
    """A linear system or factorisation hit a (numerically) zero pivot."""


class ConvergenceError(RQLoopError, ArithmeticError):
    """An iterative method did not reach its tolerance."""


class DivergenceError(RQLoopError, ArithmeticError):
    """A stationary quantity was requested for a non-contracting system."""


class IllPosedError(RQLoopError, ValueError):
    """Inputs for which a bound formula is meaningless."""


class ConfigError(RQLoopError, ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
