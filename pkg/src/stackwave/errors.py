"""Exception hierarchy shared by all modules."""


class StackwaveError(Exception):
    pass


class DomainError(StackwaveError, ValueError):
    """Argument outside the domain of an evaluator."""


class ConfigError(StackwaveError, ValueError):
    """Invalid configuration (grid, partition, run config...)."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ContractError(StackwaveError, ValueError):
    """A precondition on the inputs of an operation was violated."""


class ShapeError(ContractError):
    pass


class InstabilityError(StackwaveError, FloatingPointError):
    pass


class NonConvergence(StackwaveError, RuntimeError):
    """An iterative solve stopped before reaching its tolerance.

    ``history`` holds the residual (or objective) sequence of the run.
    """

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)
