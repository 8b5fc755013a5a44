"""Exception types shared across the package."""


class PrismError(Exception):
    """Base class for all errors raised by prism_irl."""


class ValidationError(PrismError, ValueError):
    """Input data or configuration failed validation."""


class DimensionMismatch(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class BoundsError(IndexOutOfRange):
    """A token or index in a file exceeds the declared |S| or |A|."""


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidConfig(ValidationError):
    pass


class TooFewPoints(ValidationError):
    pass


class InstanceTooLarge(ValidationError):
    pass


class NonConvergence(PrismError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, residual, iterations, what="solver", intention=None):
        self.residual = float(residual)
        self.iterations = int(iterations)
        self.intention = intention
        msg = f"{what} did not converge after {iterations} iterations (residual {residual:.3e})"
        if intention is not None:
            msg += f" [intention {intention}]"
        super().__init__(msg)


class NumericalFault(PrismError, FloatingPointError):
    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
