"""Adaptive MCMC with trajectory averaging.

Stochastic-approximation samplers that reweight a partitioned sample
space on the fly (flat-histogram style), a generic varying-truncation
driver, a missing-data maximum likelihood solver built on the same
recursion, and an exact finite-chain oracle for validating all of them.
"""

from .kernels import (
    Box,
    DiscreteNeighbor,
    Proposal,
    RandomWalk,
    mh_step,
    propose,
    reflect_into_box,
)
from .oracle import (
    FiniteChainSpec,
    NoiseCovariance,
    asymptotic_cov,
    chain10,
    dump_chain_file,
    exact_omega,
    jacobian,
    load_chain_file,
    lyapunov,
    mean_field,
    noise_covariance,
    poisson_solve,
    region_masses,
    stationary_dist,
    theta_star,
    transition_matrix,
    visit_indicator_table,
)
from .sa import (
    GainSchedule,
    KahanSum,
    NonFiniteIterateError,
    RunTrace,
    SaProblem,
    ScheduleClause,
    ScheduleValidationError,
    Snapshot,
    TruncationDecision,
    TruncationLadder,
    ValidationReport,
    gain_at,
    run_sa,
    threshold_at,
    trajectory_average,
    truncation_decide,
    validate_schedule,
)
from .samc import (
    FiniteStates,
    SamcModel,
    SamcTheta,
    omega_hat,
    run_samc,
    run_samc_batch,
    samc_log_ratio,
    samc_update,
    trial_log_density,
    visit_freq,
)
from .samle import (
    MissingDataModel,
    NonFiniteGradientError,
    gaussian_location_model,
    load_gaussian_toy,
    run_samle,
    run_samle_batch,
    samle_step,
)
from .harness import (
    OUTPUT_DIR_ENV,
    ConfigError,
    EfficiencyReport,
    ExperimentConfig,
    load_config,
    read_report,
    read_trace,
    run_replications,
    run_single,
    write_outputs,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "OUTPUT_DIR_ENV",
    "Box",
    "ConfigError",
    "DiscreteNeighbor",
    "EfficiencyReport",
    "ExperimentConfig",
    "FiniteChainSpec",
    "FiniteStates",
    "GainSchedule",
    "KahanSum",
    "MissingDataModel",
    "NoiseCovariance",
    "NonFiniteGradientError",
    "NonFiniteIterateError",
    "Proposal",
    "RandomWalk",
    "RunTrace",
    "SaProblem",
    "SamcModel",
    "SamcTheta",
    "ScheduleClause",
    "ScheduleValidationError",
    "Snapshot",
    "TruncationDecision",
    "TruncationLadder",
    "ValidationReport",
    "asymptotic_cov",
    "chain10",
    "dump_chain_file",
    "exact_omega",
    "gain_at",
    "gaussian_location_model",
    "jacobian",
    "load_chain_file",
    "load_config",
    "load_gaussian_toy",
    "lyapunov",
    "mean_field",
    "mh_step",
    "noise_covariance",
    "omega_hat",
    "poisson_solve",
    "propose",
    "read_report",
    "read_trace",
    "reflect_into_box",
    "region_masses",
    "run_replications",
    "run_sa",
    "run_samc",
    "run_samc_batch",
    "run_samle",
    "run_samle_batch",
    "run_single",
    "samc_log_ratio",
    "samc_update",
    "samle_step",
    "stationary_dist",
    "theta_star",
    "threshold_at",
    "trajectory_average",
    "transition_matrix",
    "trial_log_density",
    "truncation_decide",
    "validate_schedule",
    "visit_freq",
    "visit_indicator_table",
    "write_outputs",
    "write_trace",
]
