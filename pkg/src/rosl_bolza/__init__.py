"""
Discrete approximations of generalized Bolza problems for differential inclusions
with relaxed one-sided Lipschitz right-hand sides.
"""

from .bolza import (
    BolzaSpec,
    DiscretizedProblem,
    SolveResult,
    StudyTable,
    assemble,
    bolza_cost,
    cost,
    feasible,
    relaxed_cost,
    solve,
    study,
)
from .expressions import parse_expression
from .implicit_step import (
    approximate_trajectory,
    explicit_step,
    extend_and_compare,
    implicit_step,
)
from .kkt import Multipliers, check, normalize, recover_adjoint, theta
from .models.problem import ProblemFile, SolverConfig
from .setmap import AffineControlMap, SmoothInverseMap, evaluate, rosl_check
from .trajectory import DiscreteTrajectory, ReferenceTrajectory

__version__ = "0.1.0"
__all__ = [
    "AffineControlMap",
    "BolzaSpec",
    "DiscreteTrajectory",
    "DiscretizedProblem",
    "Multipliers",
    "ProblemFile",
    "ReferenceTrajectory",
    "SmoothInverseMap",
    "SolveResult",
    "SolverConfig",
    "StudyTable",
    "approximate_trajectory",
    "assemble",
    "bolza_cost",
    "check",
    "cost",
    "evaluate",
    "explicit_step",
    "extend_and_compare",
    "feasible",
    "implicit_step",
    "normalize",
    "parse_expression",
    "recover_adjoint",
    "relaxed_cost",
    "rosl_check",
    "solve",
    "study",
    "theta",
]
