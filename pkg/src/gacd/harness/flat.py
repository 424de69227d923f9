"""Flat-observation PPO baseline.

The stand-in for a conventional defense agent: the observation is the
fixed-order concatenation of every host's 4 state bits (length frozen at the
training topology), the policy is an MLP over the flat list of
``n_hosts * 5`` host/kind actions, and the PPO machinery is shared with the
graph agent.  Nothing masks invalid choices, so the agent can (and while
untrained, will) burn episodes on duplicate decoys — and because position in
the vector is all it knows, relabeling hosts or resizing the network breaks
it.  That fragility is the point of carrying this baseline around.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from .. import __version__
from ..agent import KIND_ORDER, N_KINDS, RolloutBuffer, ppo_loss
from ..cybersim import BlueAction, BlueKind, Observation, step
from ..graphobs import flat_bits
from ..neural import (
    Tape,
    Tensor,
    backward,
    constant,
    log,
    masked_softmax,
    matmul,
    relu,
    reshape,
    tsum,
)
from ..neural.params import ParamStore, glorot, save_checkpoint
from ..scenario import Scenario
from .config import TrainConfig, config_hash
from .train import (
    LANE_ACT,
    LANE_SHUFFLE,
    METRICS_HEADER,
    TRAIN_EPISODES_HEADER,
    _Env,
    assign_red_kinds,
    build_scenarios,
    write_csv,
)

BITS_PER_HOST = 4
LOG_EPS = 1e-12


def obs_vector(scenario: Scenario, obs: Observation, inv: np.ndarray | None = None) -> np.ndarray:
    """4*N bit vector; ``inv`` reorders host slots (slot j shows host inv[j])."""
    bits = flat_bits(scenario, obs)
    if inv is None:
        return bits
    return bits.reshape(-1, BITS_PER_HOST)[inv].ravel()


def action_for(scenario: Scenario, index: int, inv: np.ndarray | None = None) -> BlueAction:
    """Decode a flat action index against the (possibly reordered) host slots."""
    slot, kind_idx = divmod(index, N_KINDS)
    host_idx = slot if inv is None else int(inv[slot])
    kind = KIND_ORDER[kind_idx]
    target = scenario.hosts[host_idx].id
    return BlueAction(kind, None if kind is BlueKind.SLEEP else target)


def build_flat(n_hosts: int, hidden: int = 64, seed: int = 0) -> ParamStore:
    store = ParamStore()
    rng = np.random.default_rng([seed, 0xF1A7])
    in_dim = BITS_PER_HOST * n_hosts
    n_actions = N_KINDS * n_hosts
    store.add("flat.trunk.w", glorot(rng, in_dim, hidden))
    store.add("flat.trunk.b", np.zeros(hidden))
    store.add("flat.pi.w", glorot(rng, hidden, n_actions))
    store.add("flat.pi.b", np.zeros(n_actions))
    store.add("flat.v.w", glorot(rng, hidden, 1))
    store.add("flat.v.b", np.zeros(1))
    return store


def flat_forward(store: ParamStore, x: np.ndarray) -> tuple[Tensor, Tensor]:
    """(k, A) action probabilities and (k, 1) values for a batch of vectors."""
    xt = constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    h = relu(matmul(xt, store["flat.trunk.w"]) + store["flat.trunk.b"])
    logits = matmul(h, store["flat.pi.w"]) + store["flat.pi.b"]
    probs = masked_softmax(logits, np.ones_like(logits.data))
    value = matmul(h, store["flat.v.w"]) + store["flat.v.b"]
    return probs, value


def flat_act(
    store: ParamStore,
    vec: np.ndarray,
    rng: np.random.Generator | None = None,
    *,
    greedy: bool = False,
) -> tuple[int, float, float]:
    """Pick an action index; returns (index, logp, value)."""
    probs, value = flat_forward(store, vec)
    p = probs.data[0]
    if greedy:
        index = int(np.argmax(p))
    else:
        if rng is None:
            raise ValueError("sampling mode needs a generator")
        index = int(rng.choice(len(p), p=p))
    return index, float(np.log(p[index] + LOG_EPS)), float(value.data[0, 0])


def _evaluate_flat_actions(
    store: ParamStore, vecs: np.ndarray, actions: np.ndarray
) -> tuple[Tensor, Tensor, Tensor]:
    """Differentiable (logp, entropy, value) rows for stored transitions."""
    probs, value = flat_forward(store, vecs)
    onehot = np.zeros(probs.data.shape)
    onehot[np.arange(len(actions)), actions] = 1.0
    chosen = tsum(probs * constant(onehot), axis=1)
    logp = log(chosen + LOG_EPS)
    entropy = -tsum(probs * log(probs + LOG_EPS), axis=1)
    return logp, entropy, reshape(value, (len(actions),))


def train_flat(config: TrainConfig) -> Path:
    """PPO on the flat encoding; mirrors the graph loop, minus the transport."""
    t_start = time.perf_counter()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = build_scenarios(config)
    n_hosts = len(scenarios[0].hosts)
    for scn in scenarios[1:]:
        if len(scn.hosts) != n_hosts:
            raise ValueError("flat baseline needs equal host counts across topologies")
    red_kinds = assign_red_kinds(config, len(scenarios))
    store = build_flat(n_hosts, hidden=config.head_hidden, seed=config.seed)

    envs = [_Env(i, scenarios[i], red_kinds[i], config) for i in range(len(scenarios))]
    for env in envs:
        env.reset_episode()

    n_envs = len(envs)
    steps_per_env = max(1, config.rollout_steps // n_envs)
    update_size = steps_per_env * n_envs
    n_updates = -(-config.total_timesteps // update_size)
    act_rng = np.random.default_rng([config.seed, LANE_ACT])
    shuffle_rng = np.random.default_rng([config.seed, LANE_SHUFFLE])

    episode_rows: list[dict] = []
    total_steps = 0
    mean_ep_reward = float("nan")

    with open(out / "metrics.csv", "w", newline="") as metrics_fh:
        metrics = csv.DictWriter(metrics_fh, fieldnames=METRICS_HEADER)
        metrics.writeheader()

        for update in range(n_updates):
            buffer = RolloutBuffer(n_envs)
            finished: list[float] = []
            for env in envs:
                for _ in range(steps_per_env):
                    vec = obs_vector(env.scenario, env.obs)
                    index, logp, value = flat_act(store, vec, act_rng)
                    env.state, sr = step(env.scenario, env.state, action_for(env.scenario, index))
                    env.ep_raw += sr.raw_reward
                    env.ep_norm += sr.normalized_reward
                    env.ep_len += 1
                    done = sr.terminated or sr.truncated or env.ep_len >= config.horizon
                    buffer.add(
                        env.index, vec, index, 0, logp, value,
                        sr.normalized_reward, done, np.zeros(1),
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

            _, last_values = flat_forward(
                store, np.stack([obs_vector(env.scenario, env.obs) for env in envs])
            )
            rollout = buffer.build(
                config.gamma, config.lam, last_values=last_values.data[:, 0].copy()
            )
            if finished:
                mean_ep_reward = float(np.mean(finished))

            part_sums = {"policy": 0.0, "value": 0.0, "entropy": 0.0, "total": 0.0}
            n_minibatches = 0
            stacked = np.stack(rollout.graphs)  # the "graphs" slot carries vectors here
            indices = np.arange(update_size)
            for _ in range(config.epochs):
                shuffle_rng.shuffle(indices)
                for lo in range(0, update_size, config.minibatch):
                    mb = indices[lo : lo + config.minibatch]
                    with Tape() as tape:
                        logp, entropy, value = _evaluate_flat_actions(
                            store, stacked[mb], rollout.nodes[mb]
                        )
                        total, parts = ppo_loss(
                            logp,
                            value,
                            entropy,
                            rollout.logp_old[mb],
                            rollout.advantages[mb],
                            rollout.returns[mb],
                            clip=config.clip,
                            value_coef=config.value_coef,
                            ent_coef=config.ent_coef,
                        )
                        store.zero_grad()
                        backward(tape, total)
                    store.adam_step(config.lr)
                    for k in ("policy", "value", "entropy"):
                        part_sums[k] += parts[k]
                    part_sums["total"] += float(total.data)
                    n_minibatches += 1

            metrics.writerow(
                {
                    "update": update,
                    "steps": total_steps,
                    "mean_ep_reward": mean_ep_reward,
                    "L_ppo": part_sums["total"] / n_minibatches,
                    "L_mse": 0.0,
                    "L_fgw": 0.0,
                    "L_ae": 0.0,
                    "entropy": part_sums["entropy"] / n_minibatches,
                }
            )
            metrics_fh.flush()

    write_csv(out / "train_episodes.csv", TRAIN_EPISODES_HEADER, episode_rows)
    ckpt = out / "policy.ckpt"
    save_checkpoint(ckpt, store)
    meta = {
        "kind": "flat",
        "n_hosts": n_hosts,
        "hidden": config.head_hidden,
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


# Stand-in target for action slots past the end of a shrunken network; no
# real host id collides with it, so the simulator rules the action invalid.
ABSENT_TARGET = "<absent>"


class FlatGreedy:
    """Greedy wrapper over a trained flat policy.

    Mismatched networks are rejected unless ``adapt`` is set, in which case
    the observation is zero-padded or truncated to the training length and
    action slots beyond the live host list resolve to a non-existent target
    (which the simulator duly punishes).
    """

    def __init__(self, store: ParamStore, n_hosts: int, adapt: bool = False) -> None:
        self.store = store
        self.n_hosts = n_hosts
        self.adapt = adapt

    def plan(self, scenario: Scenario, obs: Observation, sigma: np.ndarray | None = None) -> BlueAction:
        n = len(scenario.hosts)
        inv = None if sigma is None else np.argsort(sigma)
        vec = obs_vector(scenario, obs, inv)
        want = BITS_PER_HOST * self.n_hosts
        if len(vec) != want:
            if not self.adapt:
                raise ValueError(
                    f"flat policy expects {self.n_hosts} hosts, scenario has "
                    f"{n} (feature width mismatch)"
                )
            if len(vec) < want:
                vec = np.concatenate([vec, np.zeros(want - len(vec))])
            else:
                vec = vec[:want]
        index, _, _ = flat_act(self.store, vec, greedy=True)
        slot, kind_idx = divmod(index, N_KINDS)
        host_idx = slot if inv is None else int(inv[slot]) if slot < len(inv) else slot
        kind = KIND_ORDER[kind_idx]
        if kind is BlueKind.SLEEP:
            return BlueAction(kind)
        if host_idx >= n:
            return BlueAction(kind, ABSENT_TARGET)
        return BlueAction(kind, scenario.hosts[host_idx].id)
