"""Exception hierarchy shared across the package."""


class ObdError(Exception):
    pass


class ConfigError(ObdError, ValueError):
    """Invalid user-facing configuration (CLI exit code 2)."""


class DimensionError(ObdError, ValueError):
    pass


class NumericalError(ObdError, ArithmeticError):
    """Numerical breakdown (CLI exit code 3)."""


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(
            f"matrix is not positive definite: pivot {pivot} has value {value:.3e} "
            "(increase dampening)"
        )


class SingularFactorError(NumericalError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"triangular factor is singular: zero diagonal at index {index}")


class ConvergenceError(NumericalError):
    def __init__(self, routine: str, sweeps: int, residual: float):
        self.routine = routine
        self.sweeps = sweeps
        self.residual = residual
        super().__init__(
            f"{routine} did not converge after {sweeps} sweeps "
            f"(relative off-diagonal residual {residual:.3e})"
        )


class UndefinedCorrelationError(NumericalError):
    pass


class ManifestError(ObdError, OSError):
    pass
