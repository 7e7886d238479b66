"""Numerical laboratory for Ito equations with degenerate, discontinuous dispersion.

The package builds the stationary reference density of such an equation,
evolves its weighted parabolic equation, runs Euler-Maruyama path ensembles,
and cross-examines the two against each other: occupation of the degeneracy
set, dissipativity margins, local boundedness, a weighted space-time bound on
path functionals, and equality of path laws across versions of the dispersion
that differ on a null set.
"""

from .coefficients import (
    CoefficientSet,
    DiffusionMatrix,
    DispersionFactor,
    InverseWeight,
    builtin_family,
    check_factorization,
    estimate_ellipticity,
    eval_sigma_hat,
)
from .conditions import (
    ConditionMargin,
    ExponentWindow,
    a4prime_check,
    exponent_window,
    growth_margin,
    min_M_on_grid,
    occupation_condition_route,
)
from .config import ConfigError, ExperimentConfig, apply_set_overrides
from .density import (
    DensityField,
    psi_weights,
    solve_density,
    verify_divergence_free,
    verify_preinvariance,
)
from .diagnostics import (
    KrylovAudit,
    LawVariant,
    TwoSampleResult,
    feynman_kac_crosscheck,
    krylov_audit,
    marginal_two_sample,
    uniqueness_probe,
)
from .grids import BoxGrid, BumpFunction, GridField, SmoothBump
from .reporting import Clause, DiagnosticReport, canonical_json, digest
from .rng import derive_seed, path_normals
from .semigroup import (
    SpaceTimeField,
    audit_local_boundedness,
    evolve,
    semigroup_contraction_check,
)
from .simulate import (
    PathEnsemble,
    SimConfig,
    exit_time_stats,
    occupation_profile,
    simulate_ensemble,
    weak_error_study,
)

__all__ = [
    "BoxGrid",
    "BumpFunction",
    "Clause",
    "CoefficientSet",
    "ConditionMargin",
    "ConfigError",
    "DensityField",
    "DiagnosticReport",
    "DiffusionMatrix",
    "DispersionFactor",
    "ExperimentConfig",
    "ExponentWindow",
    "GridField",
    "InverseWeight",
    "KrylovAudit",
    "LawVariant",
    "PathEnsemble",
    "SimConfig",
    "SpaceTimeField",
    "SmoothBump",
    "TwoSampleResult",
    "a4prime_check",
    "apply_set_overrides",
    "audit_local_boundedness",
    "builtin_family",
    "canonical_json",
    "check_factorization",
    "derive_seed",
    "digest",
    "estimate_ellipticity",
    "eval_sigma_hat",
    "exit_time_stats",
    "exponent_window",
    "feynman_kac_crosscheck",
    "growth_margin",
    "krylov_audit",
    "marginal_two_sample",
    "min_M_on_grid",
    "occupation_condition_route",
    "occupation_profile",
    "path_normals",
    "psi_weights",
    "semigroup_contraction_check",
    "simulate_ensemble",
    "solve_density",
    "uniqueness_probe",
    "verify_divergence_free",
    "verify_preinvariance",
    "weak_error_study",
]

__version__ = "0.1.0"
