class ParameterError(ValueError):
    """Inputs violate a documented precondition."""


class ShapeError(ValueError):
    """Array does not live on the expected grid."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
