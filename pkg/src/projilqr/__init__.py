"""Equality-constrained iLQR via nullspace projection and a singular Riccati sweep."""

from projilqr.errors import (AdmissibilityError, DefinitionError, DivergenceError,
                             InfeasibleConstraintError, NumericalError, ProjIlqrError,
                             RelativeDegreeError)
from projilqr.problem import (OcpDefinition, TrajectoryPair, constraint_ise,
                              evaluate_constraint_stack, evaluate_total_cost)
from projilqr.riccati import Policy
from projilqr.solver import SolverSettings, lqr_initial_policy, solve

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "DefinitionError",
    "DivergenceError",
    "InfeasibleConstraintError",
    "NumericalError",
    "OcpDefinition",
    "Policy",
    "ProjIlqrError",
    "RelativeDegreeError",
    "SolverSettings",
    "TrajectoryPair",
    "constraint_ise",
    "evaluate_constraint_stack",
    "evaluate_total_cost",
    "lqr_initial_policy",
    "solve",
]
