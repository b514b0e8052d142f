"""Exception types shared by the solvers and the command-line front end."""


class MicrogridRiskError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(MicrogridRiskError, ValueError):
    """An input violates a documented precondition."""


class InfeasibleDemandError(MicrogridRiskError, ValueError):
    """The requested demand cannot be met on the feasible set."""


class NumericalError(MicrogridRiskError, RuntimeError):
    """An iterative method failed to converge within its iteration cap."""
