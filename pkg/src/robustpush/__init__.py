"""Push-sum subgradient optimization over directed graphs, with score-based
detection and severing of malicious neighbors, reference baselines, and a
seeded experiment harness."""

from .baselines import TrimmedConfig, TVConfig, run_trimmed, run_tv
from .graph import (
    DynamicDigraph,
    count_attack_edges,
    gen_erdos_renyi,
    is_strongly_connected,
    sample_connected,
    strongly_connected_components,
    to_edge_list,
)
from .harness import (
    CampaignResult,
    ExperimentConfig,
    ExperimentSpec,
    GraphSpec,
    InstanceSpec,
    OracleReport,
    SweepResult,
    SweepSpec,
    TrialReport,
    attacked_solution,
    build_trial_inputs,
    compare,
    config_from_dict,
    load_config,
    oracle_check,
    run_campaign,
    run_sweep,
)
from .metrics import (
    DetectionStats,
    cost_increase,
    degradation_ratio,
    detection_stats,
    disagreement,
    optimality_gap,
)
from .objective import (
    AttackSpec,
    ObjectiveInstance,
    apply_attack,
    closed_form_solution,
    gradient,
    hessian_min_eigenvalue,
    instance_from_json,
    instance_to_json,
    loss,
    sample_instance,
)
from .protocol import (
    NumericDegeneracyError,
    ProtocolConfig,
    SimState,
    TrajectorySample,
    detect_and_sever,
    init,
    instantaneous_score,
    round_step,
    run_trial,
    step_size,
    threshold,
    update_cumulative_score,
    xhat,
)

__version__ = "0.1.0"

__all__ = [
    "AttackSpec",
    "CampaignResult",
    "DetectionStats",
    "DynamicDigraph",
    "ExperimentConfig",
    "ExperimentSpec",
    "GraphSpec",
    "InstanceSpec",
    "NumericDegeneracyError",
    "ObjectiveInstance",
    "OracleReport",
    "ProtocolConfig",
    "SimState",
    "SweepResult",
    "SweepSpec",
    "TrajectorySample",
    "TrialReport",
    "TrimmedConfig",
    "TVConfig",
    "apply_attack",
    "attacked_solution",
    "build_trial_inputs",
    "closed_form_solution",
    "compare",
    "config_from_dict",
    "cost_increase",
    "count_attack_edges",
    "degradation_ratio",
    "detect_and_sever",
    "detection_stats",
    "disagreement",
    "gen_erdos_renyi",
    "gradient",
    "hessian_min_eigenvalue",
    "init",
    "instance_from_json",
    "instance_to_json",
    "instantaneous_score",
    "is_strongly_connected",
    "load_config",
    "loss",
    "optimality_gap",
    "oracle_check",
    "round_step",
    "run_campaign",
    "run_sweep",
    "run_trial",
    "run_trimmed",
    "run_tv",
    "sample_connected",
    "sample_instance",
    "step_size",
    "strongly_connected_components",
    "threshold",
    "to_edge_list",
    "update_cumulative_score",
    "xhat",
]
