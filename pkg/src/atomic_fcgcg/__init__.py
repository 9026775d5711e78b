"""Fully-corrective generalized conditional gradient for sparse and low-rank inverse problems."""
from .core import (
    ActiveIterate,
    Atom,
    NonFiniteObjective,
    Problem,
    SolverConfig,
    SolverError,
    SubproblemFailure,
    Termination,
    solve,
    step,
    with_reference,
)
from .baseline import BaselineConfig, solve_gcg
from .heat import HeatGrid, HeatProblem, make_dataset
from .mineffort import EffortInstance, EffortProblem
from .subproblem import CoefficientProblem, brute_force_qp, solve_weights
from .trace import TraceInstance, TraceProblem, planted_instance

__version__ = "0.1.0"
