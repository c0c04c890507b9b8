"""Exception types shared across the package."""


class LiplearnError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(LiplearnError, ValueError):
    """Operands have incompatible shapes."""


class DomainError(LiplearnError, ValueError):
    """A hyperrectangle domain is malformed (lower >= upper, wrong length, ...)."""


class NumericError(LiplearnError, ArithmeticError):
    """A computation produced or received a non-finite value."""


class ConvergenceError(LiplearnError, RuntimeError):
    """An iterative routine did not converge within its budget.

    Carries the last iterate so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class InfeasibleDataError(LiplearnError, ValueError):
    """A dataset contains duplicated inputs with conflicting outputs."""


class DivergenceError(LiplearnError, RuntimeError):
    """Training produced NaN/Inf; carries the last good checkpoint."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class BlowUpError(LiplearnError, RuntimeError):
    """ODE integration left the finite range; carries the truncated trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class CalibrationError(LiplearnError, RuntimeError):
    """Constant calibration could not produce a usable fit."""


class ContractError(LiplearnError, ValueError):
    """A caller-supplied function violates its declared contract."""


class ConfigError(LiplearnError, ValueError):
    """An experiment configuration file or override is invalid."""
