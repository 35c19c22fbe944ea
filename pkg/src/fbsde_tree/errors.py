"""Exception hierarchy shared by the solvers."""


class FbsdeError(Exception):
    """Base class for every error raised by this package."""


class UsageError(FbsdeError, ValueError):
    """Invalid argument supplied by the caller."""


class ShapeError(UsageError):
    """Array shapes do not match the tree topology or the state dimension."""


class ConfigError(UsageError):
    """An experiment configuration failed validation.

    ``path`` names the offending location inside the config document.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class NumericError(FbsdeError, ArithmeticError):
    """A coefficient evaluation produced a non-finite value."""

    def __init__(self, message, k=None, node=None):
        where = ""
        if k is not None:
            where = f" (k={k}" + (f", node={node})" if node is not None else ")")
        super().__init__(message + where)
        self.k = k
        self.node = node


class ConvergenceError(FbsdeError, RuntimeError):
    """The continuation ladder could not find a contracting step."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ResourceError(ConvergenceError):
    """The continuation ladder exceeded its depth budget."""


class SolvabilityError(FbsdeError, ArithmeticError):
    """A linear system assembled from the data is singular."""

    def __init__(self, message, condition=None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class ConvexityError(SolvabilityError):
    """The normal equations of a quadratic criterion are not positive definite."""


class VerificationError(FbsdeError, RuntimeError):
    """A generated instance failed its own condition check."""
