"""Custom exceptions for the rosl-bolza library."""

from __future__ import annotations


class RoslError(Exception):
    """Base exception for all rosl-bolza errors."""

    pass


class ConfigurationError(RoslError):
    """Exception raised when an input, a problem file or a precondition is invalid."""

    pass


class NumericalError(RoslError):
    """Exception raised when a numerical procedure fails."""

    pass


class ExpressionSyntaxError(ConfigurationError):
    """Exception raised when an expression cannot be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ConfigurationError):
    """Exception raised when an expression references an undeclared variable."""

    pass


class ArityError(ConfigurationError):
    """Exception raised when a function is called with the wrong number of args."""

    pass


class InvalidProblemError(ConfigurationError):
    """Exception raised when a Bolza problem definition is inconsistent."""

    pass


class ModeMismatchError(ConfigurationError):
    """Exception raised when the discretization mode does not fit the integrand."""

    pass


class DimensionMismatchError(ConfigurationError):
    """Exception raised when vector or set dimensions disagree."""

    pass


class ZeroDirectionError(ConfigurationError):
    """Exception raised when a support function is queried at d = 0."""

    pass


class DomainError(ConfigurationError):
    """Exception raised when a state leaves the domain box of a set-valued map."""

    pass


class StepsizeTooLargeError(ConfigurationError):
    """Exception raised when l * h is too large for the implicit scheme."""

    pass


class PointNotInSetError(ConfigurationError):
    """Exception raised when a normal cone is requested outside the set."""

    pass


class PointNotOnGraphError(ConfigurationError):
    """Exception raised when (x, y) is not a point of the graph of F."""

    pass


class UnsupportedExpressionError(ConfigurationError):
    """Exception raised when an expression leaves the analyzable nonsmooth fragment."""

    pass


class NonconvexIntegrandError(ConfigurationError):
    """Exception raised when the integrand is not certified convex in v."""

    pass


class InconsistentTrajectoryError(ConfigurationError):
    """Exception raised when a trajectory does not match its controls."""

    pass


class InfeasibleTrajectoryError(ConfigurationError):
    """Exception raised when a feasible trajectory is required but not given."""

    pass


class EmptySampleError(ConfigurationError):
    """Exception raised when a sampling budget is empty."""

    pass


class RootFindingError(NumericalError):
    """Exception raised when the inverse of a smooth map cannot be computed."""

    pass


class NoConvergenceError(NumericalError):
    """Exception raised when an iteration stops before reaching its tolerance."""

    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


class StepFailedError(NumericalError):
    """Exception raised when one step of a discrete trajectory fails."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"Step {index} failed: {cause}")
        self.index = index


class InfeasibleProblemError(NumericalError):
    """Exception raised when no feasible point of a discrete problem is found."""

    pass


class TrivialMultipliersError(NumericalError):
    """Exception raised when multipliers are all zero and cannot be normalized."""

    pass
