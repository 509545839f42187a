"""Decoupling-function solvers and diffusion/SPDE simulators for the
subcritical 2D stochastic heat equation limit, with linear-case oracles."""

from .core import (
    BETA_CRITICAL,
    ConfigError,
    DecouplingGrid,
    DomainError,
    GridSpec,
    Nonlinearity,
    NumericalError,
    SeededRng,
    ShapeError,
    SigmaKind,
    StepSizeError,
    SupercriticalError,
    grid_from_csv,
    grid_to_csv,
    j_eval,
    lip_bound,
    norm_weight_rate,
    resample_grid,
    sigma_eval,
    y_norm_distance,
)
from .decoupling import (
    PdeParams,
    PdeScheme,
    PicardParams,
    direct_pde_solve,
    fixed_point_solve,
    project_to_Z,
    qmap_mc,
)
from .linear_oracle import (
    LogNormalLaw,
    exact_linear_grid,
    jbar,
    lognormal_cdf,
    lognormal_params,
    multipoint_cov,
)
from .sde import (
    PathEnsemble,
    SdeParams,
    UltrametricConfig,
    branch_times,
    driver_index,
    simulate_multipoint,
    simulate_xi,
    validate_ultrametric,
    y_process,
)
from .spde import (
    FieldSnapshot,
    GaussianBump,
    SpdeConfig,
    estimate_j_eps,
    ew_variance_functional,
    heat_smoothed_l2_integral,
    simulate_spde,
    volterra_second_moment,
)
from .stats import (
    MomentReport,
    compare_grids,
    empirical_log_cov,
    empirical_moments,
    ks_distance,
)

__version__ = "0.1.0"
