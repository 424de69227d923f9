"""Multi-task PPO training loop and greedy evaluation.

One environment instance per training topology; each gets a red opponent
drawn once, uniformly, from the configured pool.  Rollouts are collected
round-robin (a fixed number of steps per environment per update), advantages
come from per-stream GAE, and the update runs a few shuffled-minibatch epochs
of the clipped objective plus the transport terms.  The agent always sees the
normalized reward so returns are comparable across scenarios of different
size.

Everything is seeded through explicit lanes folded into one seed sequence, so
a run is a pure function of its config: same config, same checkpoint bytes.

Evaluation is greedy and read-only.  ``evaluate`` loads a checkpoint (either
kind: graph policy or flat baseline), rolls the requested number of episodes
with per-episode derived seeds, dumps a per-episode CSV, and reduces it to an
``ExperimentReport``.  Stub policies (uniform-random blue, sleep-only) share
the same episode seeding so comparisons are matched pairs.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..agent import (
    KIND_ORDER,
    PolicyConfig,
    RolloutBuffer,
    act,
    build_policy,
    fit_latent_sdot,
    loss_m1_m2,
    policy_forward,
    pretrain_m3,
)
from ..cybersim import BlueAction, BlueKind, Observation, WorldState, reset, step, uniform_random_blue
from ..graphobs import AttributedGraph, batch, observation_to_graph, permute
from ..neural import Tape, backward
from ..neural.params import ParamStore, load_checkpoint, save_checkpoint
from ..otmap import SdotMap, cell_centroids
from ..scenario import Scenario, ScenarioSpec, generate_scenario, vanilla_cc2
from .config import ExperimentReport, TrainConfig, config_hash, report_from_returns

# Seed lanes: every random decision in a run draws from a generator seeded by
# (config.seed, lane, indices...), so streams never collide or leak.
LANE_SCENARIO = 0x51
LANE_TASK = 0x52
LANE_EPISODE = 0x53
LANE_ACT = 0x54
LANE_SHUFFLE = 0x55
LANE_SDOT = 0x56
LANE_PRETRAIN = 0x57
LANE_EVAL = 0x58
LANE_PERM = 0x59
LANE_RANDOM = 0x5A

METRICS_HEADER = [
    "update", "steps", "mean_ep_reward", "L_ppo", "L_mse", "L_fgw", "L_ae", "entropy",
]
TRAIN_EPISODES_HEADER = ["env", "episode", "update", "steps", "raw_return", "norm_return"]
EVAL_EPISODES_HEADER = [
    "episode", "scenario", "red", "seed", "steps", "raw_return", "norm_return", "invalid",
]

# Attention cost is quadratic in the node count of a batched block, so m2/m3
# minibatches are processed in small per-call chunks (losses recombined by
# transition count; the gradient is identical up to summation order).
ATTN_CHUNK = 8


def _fold(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def write_csv(path: Path | str, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# task distribution


def build_scenarios(config: TrainConfig) -> list[Scenario]:
    """The run's topology set, derived entirely from the config."""
    if config.topology_source == "vanilla":
        return [vanilla_cc2() for _ in range(config.n_topologies)]
    spec = ScenarioSpec(ns_range=config.ns_range, nh_range=config.nh_range)
    return [
        generate_scenario(spec, seed=_fold(config.seed, LANE_SCENARIO, i))
        for i in range(config.n_topologies)
    ]


def assign_red_kinds(config: TrainConfig, n_tasks: int) -> list[str]:
    """One opponent per task, drawn uniformly from the configured pool."""
    rng = np.random.default_rng([config.seed, LANE_TASK])
    return [config.red_kinds[int(rng.integers(len(config.red_kinds)))] for _ in range(n_tasks)]


def policy_config(config: TrainConfig) -> PolicyConfig:
    return PolicyConfig(
        variant=config.variant,
        width=config.width,
        latent_dim=config.latent_dim,
        head_hidden=config.head_hidden,
        n_layers=config.n_layers,
        n_heads=config.n_heads,
        ot_enabled=config.ot_enabled,
    )


def action_from_result(kind: BlueKind, target: str) -> BlueAction:
    return BlueAction(kind, None if kind is BlueKind.SLEEP else target)


@dataclass
class _Env:
    """One live environment slot: a task plus its current episode."""

    index: int
    scenario: Scenario
    red_kind: str
    config: TrainConfig
    episode: int = -1
    state: WorldState = None
    obs: Observation = None
    graph: AttributedGraph = None
    ep_raw: float = 0.0
    ep_norm: float = 0.0
    ep_len: int = 0

    def reset_episode(self) -> None:
        self.episode += 1
        seed = _fold(self.config.seed, LANE_EPISODE, self.index, self.episode)
        self.state, self.obs = reset(self.scenario, self.red_kind, seed, self.config.p_green)
        self.graph = observation_to_graph(self.scenario, self.obs)
        self.ep_raw = self.ep_norm = 0.0
        self.ep_len = 0


def _state_values(store: ParamStore, pcfg: PolicyConfig, graphs: list[AttributedGraph]) -> np.ndarray:
    """Value estimates for bootstrap, without touching any sampling stream."""
    fwd = policy_forward(store, pcfg, batch(graphs))
    return fwd.value.data[:, 0].copy()


def _pretrain_corpus(config: TrainConfig, scenarios: list[Scenario], red_kinds: list[str]) -> list[AttributedGraph]:
    """Observation graphs from uniform-random play, for m3 reconstruction."""
    rng = np.random.default_rng([config.seed, LANE_PRETRAIN])
    corpus: list[AttributedGraph] = []
    episode = 0
    while len(corpus) < config.pretrain_graphs:
        scn = scenarios[episode % len(scenarios)]
        red = red_kinds[episode % len(scenarios)]
        state, obs = reset(scn, red, _fold(config.seed, LANE_PRETRAIN, episode), config.p_green)
        corpus.append(observation_to_graph(scn, obs))
        while len(corpus) < config.pretrain_graphs:
            state, sr = step(scn, state, uniform_random_blue(scn, rng))
            corpus.append(observation_to_graph(scn, sr.observation))
            if sr.terminated or sr.truncated:
                break
        episode += 1
    return corpus


# ---------------------------------------------------------------------------
# training


def train(config: TrainConfig) -> Path:
    """Run PPO to budget; returns the checkpoint path (metrics CSV beside it)."""
    if config.variant == "flat":
        from .flat import train_flat

        return train_flat(config)

    t_start = time.perf_counter()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = build_scenarios(config)
    red_kinds = assign_red_kinds(config, len(scenarios))
    pcfg = policy_config(config)
    store = build_policy(pcfg, seed=config.seed)

    l_ae_final = 0.0
    if config.variant == "m3":
        corpus = _pretrain_corpus(config, scenarios, red_kinds)
        history = pretrain_m3(
            store,
            pcfg,
            corpus,
            epochs=config.pretrain_epochs,
            lr=config.pretrain_lr,
            w_ot=config.w_ot if config.ot_enabled else 0.0,
            refit_every=config.sdot_refit_every,
            seed=_fold(config.seed, LANE_PRETRAIN, 0x9E),
        )
        l_ae_final = history["l_ae"][-1]
        write_csv(
            out / "pretrain.csv",
            ["epoch", "l_ae", "l_ot", "total"],
            [
                {"epoch": e, "l_ae": a, "l_ot": o, "total": t}
                for e, (a, o, t) in enumerate(
                    zip(history["l_ae"], history["l_ot"], history["total"])
                )
            ],
        )

    envs = [_Env(i, scenarios[i], red_kinds[i], config) for i in range(len(scenarios))]
    for env in envs:
        env.reset_episode()

    n_envs = len(envs)
    steps_per_env = max(1, config.rollout_steps // n_envs)
    update_size = steps_per_env * n_envs
    n_updates = -(-config.total_timesteps // update_size)  # ceil
    act_rng = np.random.default_rng([config.seed, LANE_ACT])
    shuffle_rng = np.random.default_rng([config.seed, LANE_SHUFFLE])

    use_transport = config.ot_enabled and config.variant in ("m1", "m2")
    sdot_map: SdotMap | None = None
    centroids: np.ndarray | None = None
    z_history: list[np.ndarray] = []

    episode_rows: list[dict] = []
    total_steps = 0
    mean_ep_reward = float("nan")

    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", newline="") as metrics_fh:
        metrics = csv.DictWriter(metrics_fh, fieldnames=METRICS_HEADER)
        metrics.writeheader()

        for update in range(n_updates):
            buffer = RolloutBuffer(n_envs)
            finished: list[float] = []
            for env in envs:
                for _ in range(steps_per_env):
                    res = act(store, pcfg, env.graph, act_rng)
                    action = action_from_result(res.kind, res.target)
                    env.state, sr = step(env.scenario, env.state, action)
                    env.ep_raw += sr.raw_reward
                    env.ep_norm += sr.normalized_reward
                    env.ep_len += 1
                    done = sr.terminated or sr.truncated or env.ep_len >= config.horizon
                    buffer.add(
                        env.index,
                        env.graph,
                        res.node,
                        KIND_ORDER.index(res.kind),
                        res.logp,
                        res.value,
                        sr.normalized_reward,
                        done,
                        res.info["z"],
                    )
                    total_steps += 1
                    if done:
                        finished.append(env.ep_norm)
                        episode_rows.append(
                            {
                                "env": env.index,
                                "episode": env.episode,
                                "update": update,
                                "steps": env.ep_len,
                                "raw_return": env.ep_raw,
                                "norm_return": env.ep_norm,
                            }
                        )
                        env.reset_episode()
                    else:
                        env.obs = sr.observation
                        env.graph = observation_to_graph(env.scenario, sr.observation)

            last_values = _state_values(store, pcfg, [env.graph for env in envs])
            rollout = buffer.build(config.gamma, config.lam, last_values=last_values)
            if finished:
                mean_ep_reward = float(np.mean(finished))

            z_history.extend(rollout.zs)
            z_history = z_history[-config.sdot_window :]
            if use_transport and update % config.sdot_refit_every == 0:
                sdot_map = fit_latent_sdot(
                    np.asarray(z_history),
                    seed=_fold(config.seed, LANE_SDOT, update),
                    window=config.sdot_window,
                )
                centroids = cell_centroids(sdot_map, seed=_fold(config.seed, LANE_SDOT, update, 1))

            part_sums = {"l_ppo": 0.0, "l_mse": 0.0, "l_fgw": 0.0, "entropy": 0.0}
            n_minibatches = 0
            indices = np.arange(update_size)
            chunk = update_size if config.variant == "m1" else ATTN_CHUNK
            for _ in range(config.epochs):
                shuffle_rng.shuffle(indices)
                for lo in range(0, update_size, config.minibatch):
                    mb = indices[lo : lo + config.minibatch]
                    with Tape() as tape:
                        total = None
                        parts = {k: 0.0 for k in part_sums}
                        for clo in range(0, len(mb), chunk):
                            sel = mb[clo : clo + chunk]
                            w = len(sel) / len(mb)
                            piece, piece_parts, _ = loss_m1_m2(
                                store,
                                pcfg,
                                batch([rollout.graphs[i] for i in sel]),
                                rollout.nodes[sel],
                                rollout.kinds[sel],
                                rollout.logp_old[sel],
                                rollout.advantages[sel],
                                rollout.returns[sel],
                                sdot_map,
                                centroids,
                                clip=config.clip,
                                value_coef=config.value_coef,
                                ent_coef=config.ent_coef,
                                w_mse=config.w_mse,
                                w_fgw=config.w_fgw,
                            )
                            piece = w * piece
                            total = piece if total is None else total + piece
                            for k in parts:
                                parts[k] += w * piece_parts[k]
                        store.zero_grad()
                        backward(tape, total)
                    store.adam_step(config.lr)
                    for k in part_sums:
                        part_sums[k] += parts[k]
                    n_minibatches += 1

            metrics.writerow(
                {
                    "update": update,
                    "steps": total_steps,
                    "mean_ep_reward": mean_ep_reward,
                    "L_ppo": part_sums["l_ppo"] / n_minibatches,
                    "L_mse": part_sums["l_mse"] / n_minibatches,
                    "L_fgw": part_sums["l_fgw"] / n_minibatches,
                    "L_ae": l_ae_final,
                    "entropy": part_sums["entropy"] / n_minibatches,
                }
            )
            metrics_fh.flush()

    write_csv(out / "train_episodes.csv", TRAIN_EPISODES_HEADER, episode_rows)
    ckpt = out / "policy.ckpt"
    save_checkpoint(ckpt, store)
    meta = {
        "kind": "gacd",
        "policy": dataclasses.asdict(pcfg),
        "train_config": dataclasses.asdict(config),
        "config_hash": config_hash(config),
        "version": __version__,
        "steps": total_steps,
        "episodes": len(episode_rows),
        "runtime_s": round(time.perf_counter() - t_start, 3),
    }
    with open(str(ckpt) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ckpt


# ---------------------------------------------------------------------------
# evaluation policies


class GacdGreedy:
    """Greedy wrapper over a trained (or fresh) graph policy."""

    def __init__(self, store: ParamStore, config: PolicyConfig) -> None:
        self.store = store
        self.config = config

    def plan(self, scenario: Scenario, obs: Observation, sigma: np.ndarray | None = None) -> BlueAction:
        graph = observation_to_graph(scenario, obs)
        if sigma is not None:
            # sigma permutes hosts; graphs order subnets first, so shift it
            # into the host block and leave subnet/decoy nodes in place
            n_s = len(scenario.subnets)
            full = np.arange(graph.n)
            full[n_s : n_s + len(sigma)] = n_s + sigma
            graph = permute(graph, full)
        res = act(self.store, self.config, graph, greedy=True)
        return action_from_result(res.kind, res.target)


class RandomBlue:
    """Uniform-random blue; reseeded per episode so pairings are exact."""

    def __init__(self, seed: int = 0) -> None:
        self._seed = seed
        self._rng = np.random.default_rng([seed, LANE_RANDOM])

    def begin_episode(self, episode_seed: int) -> None:
        self._rng = np.random.default_rng([self._seed, LANE_RANDOM, episode_seed])

    def plan(self, scenario: Scenario, obs: Observation, sigma: np.ndarray | None = None) -> BlueAction:
        return uniform_random_blue(scenario, self._rng)


class SleepOnly:
    """Does nothing, forever; a floor for sanity checks."""

    def plan(self, scenario: Scenario, obs: Observation, sigma: np.ndarray | None = None) -> BlueAction:
        return BlueAction(BlueKind.SLEEP)


def load_policy(ckpt: Path | str):
    """Rebuild the greedy policy stored at ``ckpt`` (either checkpoint kind)."""
    with open(str(ckpt) + ".meta.json") as fh:
        meta = json.load(fh)
    arrays = load_checkpoint(ckpt)
    store = ParamStore()
    for name, arr in arrays.items():
        store.add(name, arr)
    if meta["kind"] == "flat":
        from .flat import FlatGreedy

        return FlatGreedy(store, n_hosts=meta["n_hosts"]), meta
    return GacdGreedy(store, PolicyConfig(**meta["policy"])), meta


# ---------------------------------------------------------------------------
# evaluation


def eval_episodes(
    policy,
    scenarios: list[Scenario],
    red_kind: str,
    episodes: int,
    *,
    seed: int = 0,
    p_green: float = 0.25,
    permute_nodes: bool = False,
    horizon: int = 100,
) -> list[dict]:
    """Greedy rollouts with derived per-episode seeds; one row per episode.

    With ``permute_nodes`` the policy sees each episode's observations under
    a fixed random node relabeling (the environment itself is untouched, so
    matched-seed runs with and without the flag face identical worlds).
    """
    rows: list[dict] = []
    for e in range(episodes):
        scenario = scenarios[e % len(scenarios)]
        ep_seed = _fold(seed, LANE_EVAL, e)
        sigma = None
        if permute_nodes:
            perm_rng = np.random.default_rng([seed, LANE_PERM, e])
            sigma = perm_rng.permutation(len(scenario.hosts))
        begin = getattr(policy, "begin_episode", None)
        if begin is not None:
            begin(ep_seed)
        state, obs = reset(scenario, red_kind, ep_seed, p_green)
        raw = norm = 0.0
        invalid = 0
        steps = 0
        for _ in range(horizon):
            action = policy.plan(scenario, obs, sigma)
            state, sr = step(scenario, state, action)
            raw += sr.raw_reward
            norm += sr.normalized_reward
            steps += 1
            invalid += int(sr.info.get("invalid_action", False))
            obs = sr.observation
            if sr.terminated or sr.truncated:
                break
        rows.append(
            {
                "episode": e,
                "scenario": e % len(scenarios),
                "red": red_kind,
                "seed": ep_seed,
                "steps": steps,
                "raw_return": raw,
                "norm_return": norm,
                "invalid": invalid,
            }
        )
    return rows


def evaluate(
    ckpt: Path | str,
    scenarios: list[Scenario],
    red_kind: str,
    episodes: int,
    *,
    seed: int = 0,
    p_green: float = 0.25,
    permute_nodes: bool = False,
    condition: str | None = None,
    episodes_csv: Path | str | None = None,
) -> ExperimentReport:
    """Evaluate a checkpoint; returns the report, dumps per-episode rewards."""
    t0 = time.perf_counter()
    policy, meta = load_policy(ckpt)
    rows = eval_episodes(
        policy,
        scenarios,
        red_kind,
        episodes,
        seed=seed,
        p_green=p_green,
        permute_nodes=permute_nodes,
    )
    if episodes_csv is None:
        episodes_csv = Path(ckpt).parent / "eval_episodes.csv"
    write_csv(episodes_csv, EVAL_EPISODES_HEADER, rows)
    label = condition if condition is not None else f"{meta['kind']}-{red_kind}"
    return report_from_returns(
        label, [r["norm_return"] for r in rows], time.perf_counter() - t0
    )


def write_report_csv(path: Path | str, reports: list[ExperimentReport]) -> None:
    write_csv(
        path,
        ["condition", "mean_reward", "std_reward", "episodes", "runtime_s"],
        [dataclasses.asdict(r) for r in reports],
    )
