"""Closed-form oracles and bound evaluators for sketched-Jacobian continual learning."""
from .checks import CHECKS, TheoryReport, run_checks
from .gmm import (GmmSolution, LambdaSweep, failure_instance_means, failure_sigma_search,
                  gmm_ewc_solution, gmm_l2_solution, gmm_lambda_sweep, gmm_population_loss,
                  gmm_risk, hypercube_ewc_coefficients)
from .ntk import ntk_complexity, ntk_monte_carlo_check, ntk_risk_bound_rhs, ntk_risk_check
from .regression import multitask_accumulation, regression_scaling_check
from .sketching import (SketchDeviationReport, partially_sketched_gd, sketch_concentration_check,
                        sketch_deviation_check)

__all__ = [
    "CHECKS", "TheoryReport", "run_checks", "GmmSolution", "LambdaSweep", "failure_instance_means",
    "failure_sigma_search", "gmm_ewc_solution", "gmm_l2_solution", "gmm_lambda_sweep",
    "gmm_population_loss", "gmm_risk", "hypercube_ewc_coefficients", "ntk_complexity",
    "ntk_monte_carlo_check", "ntk_risk_bound_rhs", "ntk_risk_check", "multitask_accumulation",
    "regression_scaling_check", "SketchDeviationReport", "partially_sketched_gd",
    "sketch_concentration_check", "sketch_deviation_check",
]
