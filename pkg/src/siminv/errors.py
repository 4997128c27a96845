"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates an operation's preconditions."""


class DegenerateError(ArithmeticError):
    """A quantity is undefined for the given input (e.g. zero denominator)."""


class TrainingError(RuntimeError):
    """Training diverged.

    Attributes:
        iteration: the iteration at which the loss became non-finite.
    """

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration
