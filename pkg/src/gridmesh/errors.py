"""Exception types shared across the solvers."""


class NumericalError(RuntimeError):
    """A linear system was singular or an iterate became non-finite."""


class ConvergenceError(NumericalError):
    """An iterative method exhausted its iteration budget."""

    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


class LocalSolveError(NumericalError):
    """A regional subproblem could not be solved."""
