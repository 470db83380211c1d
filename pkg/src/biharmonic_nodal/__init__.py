"""Positive, negative and sign-changing radial solutions of

    Lap^2 u + V(|x|) u = f(|x|, u)   in R^N,  N >= 5,

computed with a descent flow, cone projections and boundary bisection.
"""

from .cli_io import RunConfig, parse_config, run
from .flow import FlowConfig
from .model import Problem, build_problem
from .solver import SolutionBundle, SolverConfig, solve

__all__ = [
    "FlowConfig",
    "Problem",
    "RunConfig",
    "SolutionBundle",
    "SolverConfig",
    "build_problem",
    "parse_config",
    "run",
    "solve",
]
