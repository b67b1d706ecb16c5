"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Bad user input: config files, preset names, invalid parameter combinations."""


class ContractViolation(ValueError):
    """An internal precondition was handed invalid data (negative opacity, shape
    mismatch, non-orthonormal factor, ...)."""


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed."""


class IterationLimitError(SolverError):
    """Fixed-point iteration hit its cap before reaching the tolerance."""

    def __init__(self, message, iterations, residual):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class CgError(SolverError):
    """Conjugate gradient stagnated or hit its iteration cap."""

    def __init__(self, message, iterations, residual_history):
        tail = ", ".join(f"{r:.3e}" for r in residual_history[-5:])
        super().__init__(f"{message} (iterations={iterations}, last residuals: {tail})")
        self.iterations = iterations
        self.residual_history = residual_history


class InterpolationError(RuntimeError):
    """Greedy angular interpolation-point selection could not find enough points."""

    def __init__(self, message, column):
        super().__init__(f"{message} (column {column})")
        self.column = column
