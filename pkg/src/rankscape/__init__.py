"""Low-rank factorized training and landscape certification toolkit."""

from .constants import (
    ConstantsEstimate,
    analytic_constants,
    estimate_alpha,
    estimate_beta,
    estimate_constants,
    export_constants_csv,
    sample_lowrank_ball,
)
from .dynamics import (
    CheckpointRecord,
    RankDynamicsReport,
    export_dynamics_csv,
    rank_dynamics_check,
    required_lookback,
    statement_rank_bound,
)
from .exceptions import (
    ConfigError,
    EstimationError,
    InapplicableTheoryError,
    InsufficientHistoryError,
    InvalidInputError,
    NumericalError,
    RankOverflowError,
    RankscapeError,
)
from .experiments import (
    EXPERIMENT_KINDS,
    PlantedInstance,
    build_objective,
    planted_instance,
    planted_sweep_config,
    run_experiment,
    seeded_lowrank_target,
)
from .landscape import (
    LayerReport,
    RegimeReport,
    SospCertificate,
    VERDICT_GLOBAL,
    VERDICT_INDETERMINATE,
    VERDICT_SPURIOUS,
    check_sosp,
    classify,
    classify_approx,
    spectral_bound_check,
)
from .matcore import (
    CompactSvd,
    FactorPair,
    balanced_factors,
    compact_svd,
    exact_rank,
    nuclear_norm,
    nuclear_subgradient_residual,
    project_rank,
    svt_prox,
    truncated_rank,
)
from .objectives import (
    FactorTuple,
    MatrixTuple,
    Objective,
    RegularizedObjective,
    derivative_check,
    load_dataset_csv,
    matrix_sensing_objective,
    mlp_objective,
    quadratic_objective,
    synthetic_mlp_dataset,
)
from .optim import (
    InitScheme,
    RunConfig,
    STATUS_CONVERGED,
    STATUS_DIVERGED,
    STATUS_MAX_STEPS,
    Trajectory,
    export_trajectory_csv,
    factored_gd,
    make_init,
    prox_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointRecord",
    "CompactSvd",
    "ConfigError",
    "ConstantsEstimate",
    "EXPERIMENT_KINDS",
    "EstimationError",
    "FactorPair",
    "FactorTuple",
    "InapplicableTheoryError",
    "InitScheme",
    "InsufficientHistoryError",
    "InvalidInputError",
    "LayerReport",
    "MatrixTuple",
    "NumericalError",
    "Objective",
    "PlantedInstance",
    "RankDynamicsReport",
    "RankOverflowError",
    "RankscapeError",
    "RegimeReport",
    "RegularizedObjective",
    "RunConfig",
    "STATUS_CONVERGED",
    "STATUS_DIVERGED",
    "STATUS_MAX_STEPS",
    "SospCertificate",
    "Trajectory",
    "VERDICT_GLOBAL",
    "VERDICT_INDETERMINATE",
    "VERDICT_SPURIOUS",
    "analytic_constants",
    "balanced_factors",
    "build_objective",
    "check_sosp",
    "classify",
    "classify_approx",
    "compact_svd",
    "derivative_check",
    "estimate_alpha",
    "estimate_beta",
    "estimate_constants",
    "exact_rank",
    "export_constants_csv",
    "export_dynamics_csv",
    "export_trajectory_csv",
    "factored_gd",
    "load_dataset_csv",
    "make_init",
    "matrix_sensing_objective",
    "mlp_objective",
    "nuclear_norm",
    "nuclear_subgradient_residual",
    "planted_instance",
    "planted_sweep_config",
    "project_rank",
    "prox_gradient",
    "quadratic_objective",
    "rank_dynamics_check",
    "required_lookback",
    "run_experiment",
    "sample_lowrank_ball",
    "seeded_lowrank_target",
    "spectral_bound_check",
    "statement_rank_bound",
    "svt_prox",
    "synthetic_mlp_dataset",
    "truncated_rank",
]
