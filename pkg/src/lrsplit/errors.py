"""Exception hierarchy shared by all solver modules."""


class LowRankError(Exception):
    """Base class for every error raised by lrsplit."""


class ContractError(LowRankError, ValueError):
    """Input violates a documented precondition (shapes, ranks, symmetry)."""


class SingularError(LowRankError, ArithmeticError):
    """A linear system that has to be solved is singular."""


class RefusalError(LowRankError):
    """The request exceeds a size guard of a dense fallback routine."""


class DivergenceError(LowRankError, ArithmeticError):
    """An iterative procedure did not converge.

    ``residual`` carries the last available error estimate.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class BlowUpError(LowRankError, ArithmeticError):
    """Non-finite values appeared while integrating an inner ODE."""

    def __init__(self, message, time=float("nan")):
        super().__init__(message)
        self.time = time


class StiffnessError(DivergenceError):
    """Adaptive step size underflow in an explicit integrator."""
