"""Pseudo-spectral implicit Euler solver and strong-error harness for the
stochastic Navier-Stokes equations with Brinkman-Forchheimer damping on the
periodic 3-torus."""
from .torus import (
    CheckpointError,
    NonInvertible,
    NormReport,
    PhysicalField,
    SpectralField,
    TorusGrid,
    divergence_defect,
    inner,
    leray_project,
    load_checkpoint,
    lp_norm,
    norms,
    random_field,
    save_checkpoint,
    single_mode,
    constant_field,
    stokes_pow,
    taylor_green,
    to_physical,
    to_spectral,
)
from .nonlinear import BFParams, bf_term, bilinear_B, trilinear_b
from .noise import (
    DiffusionSpec,
    IncompatibleSpec,
    NoiseOperator,
    NoisePath,
    QSpec,
    apply_G,
    audit_condition_G,
    coarsen,
    refine,
    sample_path,
)
from .scheme import (
    SchemeParams,
    SolverDiverged,
    SolverParams,
    StepLedger,
    galerkin_project,
    implicit_step,
    run_trajectory,
    step_residual,
)
from .experiment import (
    ConfigError,
    DegenerateFit,
    ExperimentConfig,
    coupled_sample,
    fit_rate,
    load_config,
    parse_config,
    run_experiment,
)

__all__ = [
    "apply_G",
    "audit_condition_G",
    "bf_term",
    "BFParams",
    "bilinear_B",
    "CheckpointError",
    "coarsen",
    "ConfigError",
    "constant_field",
    "coupled_sample",
    "DegenerateFit",
    "DiffusionSpec",
    "divergence_defect",
    "ExperimentConfig",
    "fit_rate",
    "galerkin_project",
    "implicit_step",
    "IncompatibleSpec",
    "inner",
    "leray_project",
    "load_checkpoint",
    "load_config",
    "lp_norm",
    "NoiseOperator",
    "NoisePath",
    "NonInvertible",
    "NormReport",
    "norms",
    "parse_config",
    "PhysicalField",
    "QSpec",
    "random_field",
    "refine",
    "run_experiment",
    "run_trajectory",
    "sample_path",
    "save_checkpoint",
    "SchemeParams",
    "single_mode",
    "SolverDiverged",
    "SolverParams",
    "SpectralField",
    "step_residual",
    "StepLedger",
    "stokes_pow",
    "taylor_green",
    "to_physical",
    "to_spectral",
    "TorusGrid",
    "trilinear_b",
]

__version__ = "0.1.0"
