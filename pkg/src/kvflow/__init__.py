"""P2-P0 finite elements for the Kelvin-Voigt equations on the unit square."""
from .analysis import (
    ErrorReport,
    absorbing_ball_diagnostic,
    convergence_rates,
    decay_fit,
    energy_trace,
    error_norms,
    estimate_lambda1,
)
from .assembly import AssembledForms, assemble_forms
from .fem import build_dof_layout, gauss_rule
from .mesh import TriangleMesh, build_structured, refine_uniform
from .problems import example1, example2, example3, get_problem
from .stepper import FlowState, ModelConfig, TimeGrid, run, step

__version__ = "0.1.0"

__all__ = [
    "AssembledForms",
    "ErrorReport",
    "FlowState",
    "ModelConfig",
    "TimeGrid",
    "TriangleMesh",
    "absorbing_ball_diagnostic",
    "assemble_forms",
    "build_dof_layout",
    "build_structured",
    "convergence_rates",
    "decay_fit",
    "energy_trace",
    "error_norms",
    "estimate_lambda1",
    "example1",
    "example2",
    "example3",
    "gauss_rule",
    "get_problem",
    "refine_uniform",
    "run",
    "step",
]
