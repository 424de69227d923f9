"""Rollout storage, generalized advantage estimation, clipped PPO objective.

The buffer keeps one transition stream per environment so advantages never
bleed across episode or environment boundaries.  ``gae_advantages`` is the
raw recursion (its closed forms at lambda in {0, 1} are tested directly);
normalization to zero mean / unit variance happens once per update batch
when the streams are concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..graphobs import AttributedGraph
from ..neural import Tensor, clamp, constant, exp, minimum, square, tmean

ADV_EPS = 1e-8


def gae_advantages(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
    last_value: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE(gamma, lam) over one ordered stream; ``dones`` cut the bootstrap.

    ``last_value`` bootstraps the tail when the stream stops mid-episode.
    Returns (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if n == 0:
        raise ValueError("empty reward stream")
    if not (len(values) == len(dones) == n):
        raise ValueError("rewards / values / dones lengths differ")
    adv = np.zeros(n)
    carry = 0.0
    for t in range(n - 1, -1, -1):
        nxt = 0.0 if dones[t] else (last_value if t == n - 1 else values[t + 1])
        delta = rewards[t] + gamma * nxt - values[t]
        carry = delta + gamma * lam * (0.0 if dones[t] else carry)
        adv[t] = carry
    return adv, adv + values


@dataclass
class RolloutBatch:
    """Concatenated streams, ready for minibatching."""

    graphs: list[AttributedGraph]
    nodes: np.ndarray
    kinds: np.ndarray
    logp_old: np.ndarray
    values_old: np.ndarray
    advantages: np.ndarray  # normalized
    returns: np.ndarray  # raw value targets
    zs: np.ndarray  # (n, d) latent codes captured at act() time

    def __len__(self) -> int:
        return len(self.graphs)


@dataclass
class RolloutBuffer:
    """Per-environment transition streams filled during collection."""

    n_envs: int = 1
    _streams: list[dict[str, list]] = field(default_factory=list)

    def __post_init__(self):
        self._streams = [
            {k: [] for k in ("graph", "node", "kind", "logp", "value", "reward", "done", "z")}
            for _ in range(self.n_envs)
        ]

    def add(
        self,
        env: int,
        graph: AttributedGraph,
        node: int,
        kind: int,
        logp: float,
        value: float,
        reward: float,
        done: bool,
        z: np.ndarray,
    ) -> None:
        s = self._streams[env]
        s["graph"].append(graph)
        s["node"].append(int(node))
        s["kind"].append(int(kind))
        s["logp"].append(float(logp))
        s["value"].append(float(value))
        s["reward"].append(float(reward))
        s["done"].append(bool(done))
        s["z"].append(np.asarray(z, dtype=np.float64))

    def __len__(self) -> int:
        return sum(len(s["reward"]) for s in self._streams)

    def build(
        self,
        gamma: float,
        lam: float,
        last_values: np.ndarray | None = None,
        normalize: bool = True,
    ) -> RolloutBatch:
        """Advantages per stream, then one flat batch (optionally normalized)."""
        if len(self) == 0:
            raise ValueError("empty rollout buffer")
        if last_values is None:
            last_values = np.zeros(self.n_envs)
        adv_parts, ret_parts = [], []
        for env, s in enumerate(self._streams):
            if not s["reward"]:
                continue
            a, r = gae_advantages(
                np.array(s["reward"]),
                np.array(s["value"]),
                np.array(s["done"]),
                gamma,
                lam,
                last_value=float(last_values[env]),
            )
            adv_parts.append(a)
            ret_parts.append(r)
        adv = np.concatenate(adv_parts)
        if normalize:
            adv = (adv - adv.mean()) / (adv.std() + ADV_EPS)
        active = [s for s in self._streams if s["reward"]]
        return RolloutBatch(
            graphs=[g for s in active for g in s["graph"]],
            nodes=np.array([n for s in active for n in s["node"]], dtype=np.int64),
            kinds=np.array([k for s in active for k in s["kind"]], dtype=np.int64),
            logp_old=np.array([v for s in active for v in s["logp"]]),
            values_old=np.array([v for s in active for v in s["value"]]),
            advantages=adv,
            returns=np.concatenate(ret_parts),
            zs=np.stack([z for s in active for z in s["z"]]),
        )


def ppo_loss(
    logp_new: Tensor,
    values_new: Tensor,
    entropy: Tensor,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    *,
    clip: float = 0.2,
    value_coef: float = 0.5,
    ent_coef: float = 0.01,
) -> tuple[Tensor, dict[str, float]]:
    """Clipped surrogate + value regression − entropy bonus, batch means."""
    adv = constant(np.asarray(advantages, dtype=np.float64))
    ratio = exp(logp_new - constant(np.asarray(logp_old, dtype=np.float64)))
    surrogate = minimum(ratio * adv, clamp(ratio, 1.0 - clip, 1.0 + clip) * adv)
    policy_term = -tmean(surrogate)
    value_term = tmean(square(values_new - constant(np.asarray(returns, dtype=np.float64))))
    entropy_term = tmean(entropy)
    total = policy_term + value_coef * value_term - ent_coef * entropy_term
    parts = {
        "policy": float(policy_term.data),
        "value": float(value_term.data),
        "entropy": float(entropy_term.data),
    }
    return total, parts
