"""Coupling-map patched readout calibration and measurement-error mitigation."""

from .bench import (
    CalibrationStore,
    ExperimentConfig,
    ResultRecord,
    StoreError,
    derived_seed,
    emit_results,
    one_norm,
    run_experiment,
    success_probability,
)
from .calibration import (
    CalibrationError,
    CalibrationMatrix,
    CountsRecord,
    Distribution,
    JoinPlan,
    SingularFactorError,
    SparseCalibration,
    apply,
    assemble_for_measured,
    embed_dense,
    estimate_matrix,
    fractional_power,
    group_preparation_circuits,
    invert,
    join,
    make_join_plan,
    normalized_partial_trace,
    order_adjust,
    preparation_circuits,
)
from .noise import (
    IdealDistribution,
    MeasurementChannel,
    NoiseModel,
    NoiseSpec,
    compose,
    correlated_channel,
    ghz_cnot_schedule,
    ghz_distribution,
    ideal_ghz,
    sample_distribution,
    simulate_counts,
    state_dependent_channel,
    x_chain_experiment,
)
from .strategies import (
    MethodResult,
    ShotBudget,
    StrategyConfig,
    calibrate_patches,
    run_aim,
    run_bare,
    run_cmc,
    run_cmc_err,
    run_full,
    run_jigsaw,
    run_linear,
    run_method,
    run_sim,
)
from .topology import (
    CorrelationWeights,
    CouplingMap,
    ErrMap,
    PatchPlan,
    candidate_pairs,
    correlation_weights,
    err_map,
    generate_architecture,
    graph_distance,
    greedy_patch_plan,
    group_patches,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # topology
    "CouplingMap",
    "PatchPlan",
    "CorrelationWeights",
    "ErrMap",
    "generate_architecture",
    "graph_distance",
    "candidate_pairs",
    "group_patches",
    "greedy_patch_plan",
    "correlation_weights",
    "err_map",
    # calibration
    "CalibrationError",
    "SingularFactorError",
    "CalibrationMatrix",
    "CountsRecord",
    "Distribution",
    "JoinPlan",
    "SparseCalibration",
    "embed_dense",
    "preparation_circuits",
    "group_preparation_circuits",
    "estimate_matrix",
    "normalized_partial_trace",
    "fractional_power",
    "order_adjust",
    "make_join_plan",
    "join",
    "assemble_for_measured",
    "invert",
    "apply",
    # noise
    "MeasurementChannel",
    "NoiseSpec",
    "NoiseModel",
    "IdealDistribution",
    "state_dependent_channel",
    "correlated_channel",
    "compose",
    "ideal_ghz",
    "ghz_cnot_schedule",
    "ghz_distribution",
    "sample_distribution",
    "simulate_counts",
    "x_chain_experiment",
    # strategies
    "ShotBudget",
    "StrategyConfig",
    "MethodResult",
    "calibrate_patches",
    "run_bare",
    "run_full",
    "run_linear",
    "run_sim",
    "run_aim",
    "run_jigsaw",
    "run_cmc",
    "run_cmc_err",
    "run_method",
    # bench
    "ExperimentConfig",
    "ResultRecord",
    "CalibrationStore",
    "StoreError",
    "derived_seed",
    "one_norm",
    "success_probability",
    "run_experiment",
    "emit_results",
]
