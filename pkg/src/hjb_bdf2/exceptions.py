"""Exception hierarchy for the solver library."""


class HJBError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(HJBError, ValueError):
    """An argument violates a documented precondition."""


class AssemblyError(HJBError):
    """A coefficient callback produced a non-finite sample."""

    def __init__(self, message, t=None, x=None, control=None):
        super().__init__(message)
        self.t = t
        self.x = x
        self.control = control


class UnsupportedCorrelationError(HJBError, ValueError):
    """Negative correlation in the 2D seven-point stencil."""


class NotDiagonallyDominantError(HJBError):
    """The Gauss-Seidel contraction certificate cannot be formed or is >= 1."""

    def __init__(self, message, row=None, control=None, certificate=None):
        super().__init__(message)
        self.row = row
        self.control = control
        self.certificate = certificate


class NonConvergenceError(HJBError):
    """The fixed-point iteration hit ``max_iter`` before the stopping rule."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class SingularMatrixError(HJBError):
    """Banded direct solve met a numerically singular matrix."""


class CFLViolationError(HJBError):
    """The drift CFL bound failed at some time step."""

    def __init__(self, message, step=None, margin=None):
        super().__init__(message)
        self.step = step
        self.margin = margin


class StepFailure(HJBError):
    """A time step failed; wraps the underlying error with the step index."""

    def __init__(self, message, step, cause):
        super().__init__(message)
        self.step = step
        self.cause = cause


class ConfigError(HJBError, ValueError):
    """Malformed or invalid run configuration."""

    def __init__(self, message, line=None, key=None):
        loc = ""
        if line is not None:
            loc = f"line {line}: "
        elif key is not None:
            loc = f"{key}: "
        super().__init__(loc + message)
        self.line = line
        self.key = key
