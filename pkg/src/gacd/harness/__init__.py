"""Training orchestration, evaluation, experiment suite, and the flat baseline."""

from .config import (
    ExperimentReport,
    TrainConfig,
    config_from_json,
    config_hash,
    config_to_json,
    report_from_returns,
)
from .experiments import (
    experiment_cross_red,
    experiment_dynamic_switch,
    experiment_ot_ablation,
    experiment_randomization,
    experiment_topology_sweep,
    run_switch_episode,
    switch_scenario,
)
from .flat import ABSENT_TARGET, FlatGreedy, build_flat, flat_act, flat_forward, obs_vector, train_flat
from .train import (
    GacdGreedy,
    RandomBlue,
    SleepOnly,
    assign_red_kinds,
    build_scenarios,
    eval_episodes,
    evaluate,
    load_policy,
    policy_config,
    train,
    write_report_csv,
)

__all__ = [
    "ABSENT_TARGET",
    "ExperimentReport",
    "FlatGreedy",
    "GacdGreedy",
    "RandomBlue",
    "SleepOnly",
    "TrainConfig",
    "assign_red_kinds",
    "build_flat",
    "build_scenarios",
    "config_from_json",
    "config_hash",
    "config_to_json",
    "eval_episodes",
    "evaluate",
    "experiment_cross_red",
    "experiment_dynamic_switch",
    "experiment_ot_ablation",
    "experiment_randomization",
    "experiment_topology_sweep",
    "flat_act",
    "flat_forward",
    "load_policy",
    "obs_vector",
    "policy_config",
    "report_from_returns",
    "run_switch_episode",
    "switch_scenario",
    "train",
    "train_flat",
    "write_report_csv",
]
