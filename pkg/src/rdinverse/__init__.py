"""Identification of nonlinear reaction laws in 1-D reaction-diffusion
equations by bi-level Landweber iteration.

The unknown is a scalar law Pi acting pointwise on the state of

    du/dt - div(a grad u) + b u + Pi(u) = phi,   u(0) = u0,

with zero Dirichlet boundary values, observed either over the whole
space-time cylinder or at the final time only.  The upper level iterates on
the sampled curve Pi with an H^s (Fourier multiplier) gradient; each step
consults a lower-level Landweber iteration that approximates the PDE state
instead of solving the PDE exactly.  The sequential variant warm-starts
every lower run at the previous one's output, which is what makes very
short lower runs viable.
"""

from .errors import (
    ConfigurationError,
    DivergenceError,
    StagnationError,
    StructuralError,
)
from .grids import (
    SpaceGrid,
    SpaceTimeField,
    SpatialField,
    TimeGrid,
    inner_l2_space,
    inner_l2_spacetime,
    norm_l2_space,
    norm_l2_spacetime,
    trapezoid_time_integral,
    zeros_spacetime,
    zeros_spatial,
)
from .operators import (
    DirichletBiLaplacian,
    DirichletLaplacian,
    bilaplacian_solve,
    laplacian_apply,
    laplacian_solve,
    time_derivative,
)
from .reactions import (
    BUILTIN_REACTIONS,
    RangeGrid,
    ReactionCurve,
    SobolevSpec,
    builtin_reaction,
    curve_from_json,
    curve_to_json,
    derivative_curve,
    evaluate,
    hs_inner,
    hs_norm,
    interp_on,
    interval_slopes,
    l2_range_norm,
    sobolev_multipliers,
    sobolev_riesz,
    zero_curve,
)
from .forward import (
    Observation,
    PdeProblem,
    ResidualPair,
    add_noise,
    implicit_solve,
    linearized_reference_solve,
    misfit_norm,
    observation_residual,
    observe,
    pde_residual,
    reference_solve,
)
from .stopping import (
    Discrepancy,
    FixedCount,
    NoiseCoupled,
    Posterior,
    ResidualThreshold,
    StoppingRule,
    lower_should_stop,
    upper_should_stop,
)
from .lower import (
    LowerState,
    StepPolicy,
    dual_inner,
    linearized_apply,
    lower_adjoint,
    lower_run,
    residual_norm,
    state_inner,
    state_norm,
)
from .upper import (
    InversionConfig,
    RunLog,
    RunRecord,
    adjoint_integral,
    adjoint_state,
    run_inversion,
    upper_gradient,
)
from .diagnostics import (
    DiagnosticReport,
    adjoint_test,
    band_limited_curve,
    fit_rate_slope,
    gradient_check,
    tcc_ratio,
)
from .harness import (
    ExperimentConfig,
    RunSummary,
    build_problem,
    config_from_dict,
    config_to_dict,
    noise_sweep,
    parse_config,
    run_experiment,
)
from .cli import main

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_REACTIONS",
    "ConfigurationError",
    "DiagnosticReport",
    "DirichletBiLaplacian",
    "DirichletLaplacian",
    "Discrepancy",
    "DivergenceError",
    "ExperimentConfig",
    "FixedCount",
    "InversionConfig",
    "LowerState",
    "NoiseCoupled",
    "Observation",
    "PdeProblem",
    "Posterior",
    "RangeGrid",
    "ReactionCurve",
    "ResidualPair",
    "ResidualThreshold",
    "RunLog",
    "RunRecord",
    "RunSummary",
    "SobolevSpec",
    "SpaceGrid",
    "SpaceTimeField",
    "SpatialField",
    "StagnationError",
    "StepPolicy",
    "StoppingRule",
    "StructuralError",
    "TimeGrid",
    "add_noise",
    "adjoint_integral",
    "adjoint_state",
    "adjoint_test",
    "band_limited_curve",
    "bilaplacian_solve",
    "build_problem",
    "builtin_reaction",
    "config_from_dict",
    "config_to_dict",
    "curve_from_json",
    "curve_to_json",
    "derivative_curve",
    "dual_inner",
    "evaluate",
    "fit_rate_slope",
    "gradient_check",
    "hs_inner",
    "hs_norm",
    "implicit_solve",
    "inner_l2_space",
    "inner_l2_spacetime",
    "interp_on",
    "interval_slopes",
    "l2_range_norm",
    "laplacian_apply",
    "laplacian_solve",
    "linearized_apply",
    "linearized_reference_solve",
    "lower_adjoint",
    "lower_run",
    "lower_should_stop",
    "main",
    "misfit_norm",
    "noise_sweep",
    "norm_l2_space",
    "norm_l2_spacetime",
    "observation_residual",
    "observe",
    "parse_config",
    "pde_residual",
    "reference_solve",
    "residual_norm",
    "run_experiment",
    "run_inversion",
    "sobolev_multipliers",
    "sobolev_riesz",
    "state_inner",
    "state_norm",
    "time_derivative",
    "trapezoid_time_integral",
    "upper_gradient",
    "upper_should_stop",
    "zero_curve",
    "zeros_spacetime",
    "zeros_spatial",
]
