"""Solver and verification harness for the weighted degenerate p-Laplacian flow."""
from .grid import Grid, GridFunction, gradient, norm_Lq_v, norm_LpQ, dirichlet_energy
from .weights import MatrixWeightField, WeightFamilySpec, build_field, random_field
from .prox import InnerSolverConfig, ProxProblem, prox_step, solve_prox, resolvent
from .evolution import Trajectory, evolve, evaluate, refine_until_cauchy, trajectory_checks, compare
from .analysis import (decay_parameters, estimate_sobolev, extinction_analysis, ultracontractive_check,
                       nash_check, log_sobolev_gap, entropy_J, lr_dissipation_check)

__version__ = "0.1.0"
