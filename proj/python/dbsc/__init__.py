"""Design-based synthetic control: weight fitting, point estimates and
randomization variances backed by the C++ core."""

from ._dbsc import (
    Estimate,
    MultiWeightTensor,
    Panel,
    SolverError,
    ValidationError,
    WeightTensor,
    eigenvector_centrality,
    estimate,
    exact_variance,
    load_panel_csv,
    multi_estimate,
    multi_unbiased_variance_estimate,
    placebo_variance_estimate,
    solve_multi_weights,
    solve_weights,
    time_experiment_json,
    unbiased_propensities,
    unbiased_variance_estimate,
    unit_experiment_json,
    write_panel_csv,
)

__all__ = [
    "Estimate",
    "MultiWeightTensor",
    "Panel",
    "SolverError",
    "ValidationError",
    "WeightTensor",
    "eigenvector_centrality",
    "estimate",
    "exact_variance",
    "load_panel_csv",
    "multi_estimate",
    "multi_unbiased_variance_estimate",
    "placebo_variance_estimate",
    "solve_multi_weights",
    "solve_weights",
    "time_experiment_json",
    "unbiased_propensities",
    "unbiased_variance_estimate",
    "unit_experiment_json",
    "write_panel_csv",
]
