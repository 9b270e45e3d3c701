"""Ricci flow, rescaled Ricci flow and monotonicity of the lowest eigenvalue of -4 Delta + k R."""

from .errors import (
    RicciLabError,
    InvalidMetric,
    ZeroField,
    NonPositiveEigenfunction,
    SolverNoConvergence,
    StabilityViolation,
    BlowUp,
    TrajectoryTruncated,
    DomainExhausted,
    FormMismatch,
    HypothesisUnmet,
    ConfigInvalid,
    MalformedRunFile,
)

from .geometry import (
    ConformalTorus,
    RoundSphere,
    SymTensorField,
    IsotropicTensor,
    scalar_curvature,
    ricci,
    laplace_beltrami,
    gradient_norm_sq,
    hessian,
    measure_weight,
    volume,
    smooth_random_field,
    integrate as integrate_field,
)

from .spectral import (
    SpectralResult,
    lowest_eigenpair,
    dense_lowest_eigenpair,
    rayleigh_quotient,
    lambda_bar,
    f_from_eigenfunction,
    eigenpairs,
)

from .flow import (
    Constant,
    AverageScalar,
    EigenNormalized,
    TestFunction,
    FlowState,
    Trajectory,
    s_value,
    step_ricci,
    step_rescaled,
    integrate,
    metric_at,
    conjugate_f_solve,
    weighted_mass,
)

from .rescale import (
    RescaleMap,
    tau_of_t,
    build_map,
    from_rescaled,
    to_rescaled,
    undo_rescale,
    round_trip,
    correspondence_check,
)

from .functionals import (
    MonitorSeries,
    F_k,
    w_k,
    w_bar_k,
    rhs_f_variation,
    rhs_rescaled_F,
    rhs_lambda,
    rhs_w_variation,
    rhs_w_bar,
    einstein_residual,
    soliton_residual,
    monitor,
    coupled_series,
    monitor_frame,
)

from .harness import (
    CheckResult,
    RunReport,
    check_first_variation,
    check_dlambda_identity,
    check_monotone,
    check_correspondence,
    least_squares_order,
    run_suite,
)

from .config import Config, load_config, save_config_template, rng_for

from .export import read_run_csv, plot_run

__all__ = [
    # errors
    "RicciLabError",
    "InvalidMetric",
    "ZeroField",
    "NonPositiveEigenfunction",
    "SolverNoConvergence",
    "StabilityViolation",
    "BlowUp",
    "TrajectoryTruncated",
    "DomainExhausted",
    "FormMismatch",
    "HypothesisUnmet",
    "ConfigInvalid",
    "MalformedRunFile",
    # geometry
    "ConformalTorus",
    "RoundSphere",
    "SymTensorField",
    "IsotropicTensor",
    "scalar_curvature",
    "ricci",
    "laplace_beltrami",
    "gradient_norm_sq",
    "hessian",
    "measure_weight",
    "volume",
    "smooth_random_field",
    "integrate_field",
    # spectral
    "SpectralResult",
    "lowest_eigenpair",
    "dense_lowest_eigenpair",
    "rayleigh_quotient",
    "lambda_bar",
    "f_from_eigenfunction",
    "eigenpairs",
    # flow
    "Constant",
    "AverageScalar",
    "EigenNormalized",
    "TestFunction",
    "FlowState",
    "Trajectory",
    "s_value",
    "step_ricci",
    "step_rescaled",
    "integrate",
    "metric_at",
    "conjugate_f_solve",
    "weighted_mass",
    # rescale
    "RescaleMap",
    "tau_of_t",
    "build_map",
    "from_rescaled",
    "to_rescaled",
    "undo_rescale",
    "round_trip",
    "correspondence_check",
    # functionals
    "MonitorSeries",
    "F_k",
    "w_k",
    "w_bar_k",
    "rhs_f_variation",
    "rhs_rescaled_F",
    "rhs_lambda",
    "rhs_w_variation",
    "rhs_w_bar",
    "einstein_residual",
    "soliton_residual",
    "monitor",
    "coupled_series",
    "monitor_frame",
    # harness
    "CheckResult",
    "RunReport",
    "check_first_variation",
    "check_dlambda_identity",
    "check_monotone",
    "check_correspondence",
    "least_squares_order",
    "run_suite",
    # config
    "Config",
    "load_config",
    "save_config_template",
    "rng_for",
    # export
    "read_run_csv",
    "plot_run",
]
