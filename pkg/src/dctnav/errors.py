"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class UnsupportedShapeError(ValidationError):
    """Raised when a rectangle-only routine receives a general polytope."""


class SingularHomographyError(ArithmeticError):
    pass


class FilterUnavailableError(RuntimeError):
    """The movability filter could not produce an answer (timeout, bad reply)."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, best_residual=float("nan")):
        super().__init__(message)
        self.best_residual = best_residual


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class UnreachableError(RuntimeError):
    """No grid path connects start and goal."""


class SimulationFault(RuntimeError):
    pass
