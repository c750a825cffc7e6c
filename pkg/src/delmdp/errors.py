"""Exception hierarchy. Each category maps to a CLI exit code."""


class DelMdpError(Exception):
    exit_code = 1


class ValidationError(DelMdpError, ValueError):
    """Malformed MDP, config or CSV input."""

    exit_code = 3


class PlanningError(DelMdpError):
    exit_code = 4


class ReducibleChainError(PlanningError):
    """The chain induced by a policy is not irreducible (or not unichain)."""


class NonConvergenceError(PlanningError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class LpError(DelMdpError):
    exit_code = 5
