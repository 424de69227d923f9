"""Run configuration and report records for training and experiments.

A ``TrainConfig`` pins everything a run depends on: the task distribution
(topology source and count, red-agent assignment rule), the training budget,
the architecture variant and its sizes, every PPO hyperparameter, and the
transport-refit cadence.  The JSON form mirrors the field names one-to-one so
a config file round-trips losslessly, and ``config_hash`` fingerprints the
protocol (everything except the output directory) so a rerun can be matched
to its artifacts exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

VARIANTS = ("m1", "m2", "m3", "flat")
TOPOLOGY_SOURCES = ("vanilla", "psg")
RED_KINDS = ("bline", "meander")
EPISODE_CAP = 100


@dataclass(frozen=True)
class TrainConfig:
    """One training run, fully specified.

    ``red_kinds`` is the pool the per-task red agent is drawn from
    (uniformly, once per task); a single-element pool fixes the opponent.
    ``horizon`` caps episode length and can sit below the simulator's own
    100-step cutoff for fast smoke runs, never above it.
    """

    # task distribution
    variant: str = "m1"
    topology_source: str = "vanilla"  # "vanilla" | "psg"
    n_topologies: int = 1
    ns_range: tuple[int, int] = (3, 5)  # generator subnet-count bounds
    nh_range: tuple[int, int] = (13, 20)  # generator host-count bounds
    red_kinds: tuple[str, ...] = ("bline", "meander")
    p_green: float = 0.25
    # budget
    total_timesteps: int = 50_000
    horizon: int = EPISODE_CAP
    rollout_steps: int = 512  # transitions collected per update, across envs
    seed: int = 0
    # ppo
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatch: int = 64
    value_coef: float = 0.5
    ent_coef: float = 0.01
    w_mse: float = 1.0
    w_fgw: float = 1.0
    # architecture
    width: int = 64
    latent_dim: int = 16
    head_hidden: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ot_enabled: bool = True
    # transport refits during ppo (m1/m2)
    sdot_refit_every: int = 50
    sdot_window: int = 512
    # reconstruction pretraining (m3 only)
    pretrain_graphs: int = 192
    pretrain_epochs: int = 40
    pretrain_lr: float = 1e-3
    w_ot: float = 1.0
    out_dir: str = "runs/run"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.topology_source not in TOPOLOGY_SOURCES:
            raise ValueError(f"unknown topology source {self.topology_source!r}")
        if self.total_timesteps <= 0:
            raise ValueError("total_timesteps must be positive")
        if self.n_topologies < 1:
            raise ValueError("need at least one topology")
        if not 1 <= self.horizon <= EPISODE_CAP:
            raise ValueError(f"horizon must be in [1, {EPISODE_CAP}]")
        if self.rollout_steps < 1:
            raise ValueError("rollout_steps must be positive")
        if not self.red_kinds:
            raise ValueError("red_kinds must be non-empty")
        for r in self.red_kinds:
            if r not in RED_KINDS:
                raise ValueError(f"unknown red kind {r!r}")
        if self.epochs < 1 or self.minibatch < 1:
            raise ValueError("epochs and minibatch must be positive")
        if self.sdot_refit_every < 1:
            raise ValueError("sdot_refit_every must be positive")


_TUPLE_FIELDS = ("ns_range", "nh_range", "red_kinds")


def config_to_json(config: TrainConfig) -> str:
    return json.dumps(dataclasses.asdict(config), indent=2, sort_keys=True) + "\n"


def config_from_json(text: str | bytes) -> TrainConfig:
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError("config document must be a JSON object")
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    for name in _TUPLE_FIELDS:
        if name in doc:
            doc[name] = tuple(doc[name])
    return TrainConfig(**doc)


def config_hash(config: TrainConfig) -> str:
    """Short protocol fingerprint; the output directory does not contribute."""
    doc = dataclasses.asdict(config)
    doc.pop("out_dir")
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class ExperimentReport:
    """Summary statistics for one evaluation condition."""

    condition: str
    mean_reward: float
    std_reward: float
    episodes: int
    runtime_s: float

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ValueError("a report needs at least one episode")
        if self.std_reward < 0:
            raise ValueError("std must be non-negative")


def report_from_returns(
    condition: str, returns: list[float] | np.ndarray, runtime_s: float
) -> ExperimentReport:
    """Mean/std over episode returns; std uses ddof=1 (0.0 for one episode)."""
    arr = np.asarray(returns, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return ExperimentReport(
        condition=condition,
        mean_reward=float(arr.mean()),
        std_reward=std,
        episodes=int(arr.size),
        runtime_s=float(runtime_s),
    )
