"""Regret lower bounds and directed-exploration learning for ergodic MDPs."""

__version__ = "0.1.0"

from .errors import DelMdpError, LpError, PlanningError, ValidationError  # noqa: E402
from .mdp import Mdp, delta_star, solve_optimal, validate_mdp  # noqa: E402

__all__ = [
    "DelMdpError",
    "LpError",
    "Mdp",
    "PlanningError",
    "ValidationError",
    "delta_star",
    "solve_optimal",
    "validate_mdp",
]
