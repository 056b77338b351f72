"""Exception hierarchy shared by every module of the package."""


class GTDError(Exception):
    """Base class for all package errors."""


class DimensionError(GTDError, ValueError):
    """Array shapes do not agree."""


class ProbabilityError(GTDError, ValueError):
    """A table that must be a probability distribution is not one."""


class ConvergenceError(GTDError, RuntimeError):
    """An iterative routine hit its iteration cap.

    Attributes
    ----------
    residual : float
        Residual at the last iterate.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConditioningError(GTDError, ValueError):
    """A matrix that must be invertible is (numerically) singular."""

    def __init__(self, message, min_eigenvalue=float("nan")):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class AbsoluteContinuityError(GTDError, ValueError):
    """The behavior policy does not cover an action the target policy takes."""

    def __init__(self, state, action):
        super().__init__(
            f"target policy takes action {action} in state {state} "
            "but the behavior policy never does"
        )
        self.state = state
        self.action = action


class SampleExhaustedError(GTDError, ValueError):
    """A solver asked for more transitions than the sample set holds."""


class NumericError(GTDError, ArithmeticError):
    """Root finding failed; carries the last bracket."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class SpecValidationError(GTDError, ValueError):
    """An experiment spec failed validation; ``problems`` lists every issue."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid experiment spec:\n  " + "\n  ".join(self.problems))
