"""Entropy-stable finite volumes for volume-filling cross-diffusion systems.

The library solves  d_t u = div(A(u) grad u)  for n species with volume
fractions u_i and vacancy u_{n+1} = 1 - sum u_i, in entropy variables, so
positivity, the volume constraint, mass conservation and entropy decay hold
discretely.
"""
from .diffusion import assemble_A, assemble_B, assemble_HA, diffusion_matrices, verify_lower_bound
from .entropy import (BoundaryError, InversionError, StatePoint, entropy_density, entropy_gradient,
                      entropy_hessian, invert_gradient, relative_entropy)
from .grid import (Field, Grid1D, dissipation_functionals, discrete_entropy, fisher_information,
                   gajewski_distance, hminus1_seminorm)
from .models import (HypothesisError, ModelConstants, ModelSpec, ReactionSpec, compute_constants,
                     get_model, validate_hypotheses)
from .stepper import SchemeParams, StepFailure, StepReport, Trajectory, advance, run_simulation

__version__ = "0.1.0"

__all__ = [
    "assemble_A", "assemble_B", "assemble_HA", "diffusion_matrices", "verify_lower_bound",
    "BoundaryError", "InversionError", "StatePoint", "entropy_density", "entropy_gradient",
    "entropy_hessian", "invert_gradient", "relative_entropy",
    "Field", "Grid1D", "dissipation_functionals", "discrete_entropy", "fisher_information",
    "gajewski_distance", "hminus1_seminorm",
    "HypothesisError", "ModelConstants", "ModelSpec", "ReactionSpec", "compute_constants",
    "get_model", "validate_hypotheses",
    "SchemeParams", "StepFailure", "StepReport", "Trajectory", "advance", "run_simulation",
]
