"""Numerical verification toolkit for regularity estimates of the degenerate p-Laplacian."""

from .analytic import parse_analytic
from .dualnorm import (DualNormResult, DualSettings, Functional, density_functional,
                       dual_seminorm, negative_norm_check, weak_derivative_functional)
from .experiments import (ScalingCheckSpec, SharpnessSpec, SweepRow, alpha_s, alpha_tilde,
                          scaling_invariance_check, sharpness_chain, sharpness_sweep,
                          source_of_radial_power)
from .fracnorm import (SeminormParams, besov_seminorm, check_embedding, nikolskii_seminorm,
                       slobodeckii_seminorm)
from .grid import GridSpec, MollifierSpec, Region, ScalarField, build_grid, sample_field
from .kfunctional import (InterpolationParams, KPoint, KProfile, interpolation_profile,
                          k_functional)
from .plap import DirichletProblem, EnergyParams, SolveReport, solve_dirichlet
from .report import FitResult, RefinementStudy, loglog_fit, observed_order

__version__ = "0.1.0"

__all__ = [
    "DirichletProblem", "DualNormResult", "DualSettings", "EnergyParams", "FitResult",
    "Functional", "GridSpec", "InterpolationParams", "KPoint", "KProfile", "MollifierSpec",
    "RefinementStudy", "Region", "ScalarField", "ScalingCheckSpec", "SeminormParams",
    "SharpnessSpec", "SolveReport", "SweepRow", "alpha_s", "alpha_tilde", "besov_seminorm",
    "build_grid", "check_embedding", "density_functional", "dual_seminorm",
    "interpolation_profile", "k_functional", "loglog_fit", "negative_norm_check",
    "nikolskii_seminorm", "observed_order", "parse_analytic", "sample_field",
    "scaling_invariance_check", "sharpness_chain", "sharpness_sweep",
    "slobodeckii_seminorm", "solve_dirichlet", "source_of_radial_power",
    "weak_derivative_functional",
]
