"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


class ConvergenceError(ArithmeticError):
    """The Jacobi eigensolver hit its sweep limit."""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"Jacobi eigensolver did not converge after {sweeps} sweeps "
            f"(off-diagonal residual {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


class EnumerationTooLarge(ValueError):
    """Refusing to enumerate an oversized subset family."""


class DataError(Exception):
    """Malformed or unusable input data."""


class TrainingError(RuntimeError):
    """Training produced non-finite values and was aborted."""
