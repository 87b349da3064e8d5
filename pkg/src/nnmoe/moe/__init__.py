"""Mixture-of-experts model core: parameters, likelihood, E/CM-steps and fitting."""
from __future__ import annotations

from .estep import (
    EvaluationError,
    component_log_densities,
    e_step,
    expert_log_densities,
    log_likelihood,
)
from .fit import (
    DegenerateFitError,
    FitOptions,
    FitResult,
    InsufficientDataError,
    fit,
    initialize,
    run_em,
)
from .model import Dataset, EStepCache, ExpertParams, MoEParams, MoESpec, design_matrix
from .mstep import MStepOptions, cm_step_experts, cm_step_gate, weighted_least_squares

__all__ = [
    "EvaluationError",
    "component_log_densities",
    "e_step",
    "expert_log_densities",
    "log_likelihood",
    "DegenerateFitError",
    "FitOptions",
    "FitResult",
    "InsufficientDataError",
    "fit",
    "initialize",
    "run_em",
    "Dataset",
    "EStepCache",
    "ExpertParams",
    "MoEParams",
    "MoESpec",
    "design_matrix",
    "MStepOptions",
    "cm_step_experts",
    "cm_step_gate",
    "weighted_least_squares",
]
