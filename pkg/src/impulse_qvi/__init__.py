"""Deterministic impulse control with a terminal state constraint.

Problem specs, trajectory simulation, cost evaluation, backward reachable
sets, a grid solver for the quasi-variational inequality, and post-hoc
verification of solver output.
"""

from __future__ import annotations

from .catalog import example, example_dict
from .cost import BruteForceResult, BudgetExceeded, CostBreakdown, EnumerationBudget, brute_force_value, evaluate_cost
from .dynamics import (ImpulseControl, IntegrationError, Trajectory, backward_flow, check_stability_bound,
                       check_trajectory_bounds, flow_no_impulse, integrate)
from .geometry import (ImpulseCandidateSet, check_idempotence, cone_directions, estimate_nu, intervention_terminal,
                       lattice_offsets, min_impulse_to_target, terminal_obstacle)
from .grids import SpatialGrid, interpolate
from .model import (ProblemSpec, SamplePlan, SpecError, ValidationReport, check_compatibility, load_spec, save_spec,
                    spec_from_dict, validate_spec)
from .reachability import ReachableMask, compute_reachable, make_partition, reachable_at
from .solver import (CONTINUE, INFEASIBLE, JUMP, ComparisonReport, SolverOptions, SynthesisIncomplete, ValueGrid,
                     compare_solutions, intervention, solve, solve_unconstrained_compare, synthesize_control)
from .verification import (ORACLES, AnalyticOracle, compare_mask, compare_to_oracle, continuity_modulus, dpp_check,
                           get_oracle, growth_bound_check, viscosity_residual)

__version__ = "0.1.0"

__all__ = [
    "AnalyticOracle", "BruteForceResult", "BudgetExceeded", "CONTINUE", "ComparisonReport", "CostBreakdown",
    "EnumerationBudget", "INFEASIBLE", "ImpulseCandidateSet", "ImpulseControl", "IntegrationError", "JUMP",
    "ORACLES", "ProblemSpec", "ReachableMask", "SamplePlan", "SolverOptions", "SpatialGrid", "SpecError",
    "SynthesisIncomplete", "Trajectory", "ValidationReport", "ValueGrid", "backward_flow", "brute_force_value",
    "check_compatibility", "check_idempotence", "check_stability_bound", "check_trajectory_bounds",
    "compare_mask", "compare_solutions", "compare_to_oracle", "compute_reachable", "cone_directions",
    "continuity_modulus", "dpp_check", "estimate_nu", "evaluate_cost", "example", "example_dict",
    "flow_no_impulse", "get_oracle", "growth_bound_check", "integrate", "interpolate", "intervention",
    "intervention_terminal", "lattice_offsets", "load_spec", "make_partition", "min_impulse_to_target",
    "reachable_at", "save_spec", "solve", "solve_unconstrained_compare", "spec_from_dict", "synthesize_control",
    "terminal_obstacle", "validate_spec", "viscosity_residual",
]
