"""Graph policy: encoder variants, transport-map conditioning, dual heads.

Variant m1 encodes with a feature MLP plus two mean-aggregating message
passing hops.  Variants m2/m3 swap in a small graph transformer whose
attention is biased by bucketed shortest-path distances and degree
embeddings; m3 additionally owns a variational decoder used only during
pretraining.  Every variant produces

    node embeddings H      (one row per node, permutation equivariant)
    graph embedding g      (mean pool per graph)
    latent code z = W g    (one row per graph)
    noise coords x         (sigmoid-squashed through the forward map,
                            or z unchanged when the transport layer is off)

Action selection is hierarchical: a node head scores every Host node (other
node kinds are masked out), then a kind head picks one of the five command
kinds conditioned on the chosen node's embedding and x.  Deploying a decoy
on an already-shielded host is masked away, which is what makes emitted
actions structurally valid on any topology, including one swapped in
mid-episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..cybersim import BlueKind
from ..graphobs import (
    AttributedGraph,
    BatchedGraph,
    batch,
    degrees,
    shortest_path_distances,
    UNREACHABLE,
)
from ..neural import (
    ParamStore,
    Tensor,
    concat,
    constant,
    gather_rows,
    gelu,
    glorot,
    graphormer_layer,
    log,
    masked_softmax,
    matmul,
    mlp,
    mp_layer,
    mean_pool,
    relu,
    reshape,
    segment_softmax,
    segment_sum,
    sigmoid,
    tsum,
)

VARIANTS = ("m1", "m2", "m3")
KIND_ORDER = (
    BlueKind.SLEEP,
    BlueKind.ANALYSE,
    BlueKind.REMOVE,
    BlueKind.RESTORE,
    BlueKind.DEPLOY_DECOY,
)
N_KINDS = len(KIND_ORDER)
DEPLOY_IDX = KIND_ORDER.index(BlueKind.DEPLOY_DECOY)
MASK_SCORE = 1e9
LOG_EPS = 1e-12
GREEDY_TOL = 1e-9


@dataclass(frozen=True)
class PolicyConfig:
    variant: str = "m1"
    width: int = 64
    latent_dim: int = 16
    head_hidden: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_degree: int = 8
    spd_cap: int = 8
    ot_enabled: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant != "m1" and self.width % self.n_heads:
            raise ValueError("width must divide evenly across attention heads")

    @property
    def n_spd_buckets(self) -> int:
        # hop counts 0..cap, plus one bucket for far/unreachable/cross-graph
        return self.spd_cap + 2


def build_policy(config: PolicyConfig, seed: int = 0) -> ParamStore:
    """Initialize every parameter the variant needs, under stable names."""
    rng = np.random.default_rng([seed, 0x90CF])
    store = ParamStore()
    w, d, hh = config.width, config.latent_dim, config.head_hidden

    store.add("enc.embed.w", glorot(rng, 7, w))
    store.add("enc.embed.b", np.zeros(w))
    if config.variant == "m1":
        for layer in range(config.n_layers):
            store.add(f"enc.mp{layer}.w_self", glorot(rng, w, w))
            store.add(f"enc.mp{layer}.w_nbr", glorot(rng, w, w))
            store.add(f"enc.mp{layer}.b", np.zeros(w))
    else:
        for layer in range(config.n_layers):
            pre = f"enc.g{layer}"
            store.add(f"{pre}.deg", 0.02 * rng.standard_normal((config.max_degree + 1, w)))
            for nm in ("wq", "wk", "wv", "wo"):
                store.add(f"{pre}.{nm}", glorot(rng, w, w))
            for head in range(config.n_heads):
                store.add(f"{pre}.bias{head}", np.zeros(config.n_spd_buckets))
            store.add(f"{pre}.g1", np.ones(w))
            store.add(f"{pre}.b1", np.zeros(w))
            store.add(f"{pre}.g2", np.ones(w))
            store.add(f"{pre}.b2", np.zeros(w))
            store.add(f"{pre}.wf1", glorot(rng, w, 2 * w))
            store.add(f"{pre}.bf1", np.zeros(2 * w))
            store.add(f"{pre}.wf2", glorot(rng, 2 * w, w))
            store.add(f"{pre}.bf2", np.zeros(w))
    store.add("enc.latent.w", glorot(rng, w, d))
    store.add("enc.latent.b", np.zeros(d))

    store.add("fmap.w1", glorot(rng, d, hh))
    store.add("fmap.b1", np.zeros(hh))
    store.add("fmap.w2", glorot(rng, hh, d))
    store.add("fmap.b2", np.zeros(d))

    for head_name, out_dim in (("node", 1), ("kind", N_KINDS), ("value", 1)):
        store.add(f"{head_name}.w1", glorot(rng, w + d, hh))
        store.add(f"{head_name}.b1", np.zeros(hh))
        store.add(f"{head_name}.w2", glorot(rng, hh, out_dim))
        store.add(f"{head_name}.b2", np.zeros(out_dim))

    if config.variant == "m3":
        store.add("dec.mu.w", glorot(rng, w, d))
        store.add("dec.mu.b", np.zeros(d))
        store.add("dec.logvar.w", glorot(rng, w, d))
        store.add("dec.logvar.b", np.zeros(d))
        store.add("dec.feat.w", glorot(rng, d, 7))
        store.add("dec.feat.b", np.zeros(7))
    return store


def _spd_buckets_for_batch(config: PolicyConfig, batched: BatchedGraph) -> np.ndarray:
    n = batched.n_nodes
    far = config.n_spd_buckets - 1
    out = np.full((n, n), far, dtype=np.int64)
    for gi, graph in enumerate(batched.members):
        sl = batched.node_slice(gi)
        d = shortest_path_distances(graph)
        bucket = np.where(d == UNREACHABLE, far, np.minimum(d, config.spd_cap))
        out[sl, sl] = bucket
    return out


def _degrees_for_batch(config: PolicyConfig, batched: BatchedGraph) -> np.ndarray:
    degs = np.concatenate([degrees(g) for g in batched.members])
    return np.minimum(degs, config.max_degree)


def encode(
    store: ParamStore, config: PolicyConfig, batched: BatchedGraph
) -> tuple[Tensor, Tensor]:
    """Node embeddings and mean-pooled graph embeddings for a batch."""
    feats = constant(batched.features)
    h = relu(matmul(feats, store["enc.embed.w"]) + store["enc.embed.b"])
    if config.variant == "m1":
        for layer in range(config.n_layers):
            h = mp_layer(
                h,
                batched.edges,
                store[f"enc.mp{layer}.w_self"],
                store[f"enc.mp{layer}.w_nbr"],
                store[f"enc.mp{layer}.b"],
            )
    else:
        spd = _spd_buckets_for_batch(config, batched)
        degs = _degrees_for_batch(config, batched)
        attn_mask = (
            batched.graph_ids[:, None] == batched.graph_ids[None, :]
        ).astype(np.float64)
        for layer in range(config.n_layers):
            pre = f"enc.g{layer}"
            params = {
                key: store[f"{pre}.{key}"]
                for key in (
                    ["deg", "wq", "wk", "wv", "wo", "g1", "b1", "g2", "b2"]
                    + ["wf1", "bf1", "wf2", "bf2"]
                    + [f"bias{i}" for i in range(config.n_heads)]
                )
            }
            h = graphormer_layer(
                h, spd, degs, params, config.n_heads, attn_mask=attn_mask, act=gelu
            )
    graph_emb = mean_pool(h, batched.graph_ids, batched.n_graphs)
    return h, graph_emb


def latent_codes_of(store: ParamStore, graph_emb: Tensor) -> Tensor:
    return matmul(graph_emb, store["enc.latent.w"]) + store["enc.latent.b"]


def noise_coords(store: ParamStore, config: PolicyConfig, z: Tensor) -> Tensor:
    """Forward map h_psi into the unit box; identity when transport is off."""
    if not config.ot_enabled:
        return z
    hidden = relu(matmul(z, store["fmap.w1"]) + store["fmap.b1"])
    return sigmoid(matmul(hidden, store["fmap.w2"]) + store["fmap.b2"])


def _head(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return mlp(
        x,
        [
            (store[f"{name}.w1"], store[f"{name}.b1"]),
            (store[f"{name}.w2"], store[f"{name}.b2"]),
        ],
        act=relu,
    )


@dataclass
class PolicyForward:
    """Everything one pass produces, kept as live tensors for the loss path."""

    node_emb: Tensor  # (n, w)
    graph_emb: Tensor  # (k, w)
    z: Tensor  # (k, d)
    x: Tensor  # (k, d)
    node_probs: Tensor  # (n,) masked softmax over Host nodes per graph
    value: Tensor  # (k, 1)
    host_mask: np.ndarray  # (n,)


def policy_forward(
    store: ParamStore, config: PolicyConfig, batched: BatchedGraph
) -> PolicyForward:
    node_emb, graph_emb = encode(store, config, batched)
    z = latent_codes_of(store, graph_emb)
    x = noise_coords(store, config, z)
    x_per_node = gather_rows(x, batched.graph_ids)
    energies = _head(store, "node", concat([node_emb, x_per_node], axis=1))
    energies = reshape(energies, (batched.n_nodes,))
    host_mask = np.concatenate([g.host_mask for g in batched.members]).astype(
        np.float64
    )
    hm = constant(host_mask)
    masked = energies * hm - constant((1.0 - host_mask) * MASK_SCORE)
    node_probs = segment_softmax(masked, batched.graph_ids, batched.n_graphs)
    value = _head(store, "value", concat([graph_emb, x], axis=1))
    return PolicyForward(
        node_emb=node_emb,
        graph_emb=graph_emb,
        z=z,
        x=x,
        node_probs=node_probs,
        value=value,
        host_mask=host_mask,
    )


def _kind_mask(batched: BatchedGraph, flat_nodes: np.ndarray) -> np.ndarray:
    """Kinds legal for each chosen node: decoyed hosts cannot take a new decoy."""
    mask = np.ones((len(flat_nodes), N_KINDS))
    decoyed = np.concatenate([g.decoyed_mask for g in batched.members])
    mask[decoyed[flat_nodes], DEPLOY_IDX] = 0.0
    return mask


def kind_distribution(
    store: ParamStore,
    config: PolicyConfig,
    fwd: PolicyForward,
    batched: BatchedGraph,
    flat_nodes: np.ndarray,
) -> Tensor:
    """(k, 5) kind probabilities conditioned on each graph's chosen node."""
    sel_emb = gather_rows(fwd.node_emb, flat_nodes)
    logits = _head(store, "kind", concat([sel_emb, fwd.x], axis=1))
    return masked_softmax(logits, _kind_mask(batched, flat_nodes))


@dataclass
class ActResult:
    node: int  # node index within the graph
    kind: BlueKind
    target: str  # host id (graph ref of the chosen node)
    logp: float
    value: float
    info: dict[str, Any] = field(default_factory=dict)


def act(
    store: ParamStore,
    config: PolicyConfig,
    graph: AttributedGraph,
    rng: np.random.Generator | None = None,
    *,
    greedy: bool = False,
    sdot_ext=None,
) -> ActResult:
    """Pick (node, kind) for one observation graph; greedy or sampled."""
    if not graph.host_mask.any():
        raise ValueError("policy needs at least one Host node to act on")
    if not greedy and rng is None:
        raise ValueError("sampling mode needs a generator")
    batched = batch([graph])
    fwd = policy_forward(store, config, batched)
    node_p = fwd.node_probs.data
    if greedy:
        # near-ties (automorphic nodes, or their last-bit float echoes) break
        # on the node ref, which travels with any relabeling
        cand = np.flatnonzero(node_p >= node_p.max() - GREEDY_TOL)
        node = int(min(cand, key=lambda i: graph.refs[i]))
    else:
        node = int(rng.choice(len(node_p), p=node_p))

    kind_probs = kind_distribution(
        store, config, fwd, batched, np.array([node])
    ).data[0]
    if greedy:
        kind_idx = int(np.flatnonzero(kind_probs >= kind_probs.max() - GREEDY_TOL)[0])
    else:
        kind_idx = int(rng.choice(N_KINDS, p=kind_probs))

    logp = float(np.log(node_p[node] + LOG_EPS) + np.log(kind_probs[kind_idx] + LOG_EPS))
    info: dict[str, Any] = {
        "z": fwd.z.data[0].copy(),
        "x": fwd.x.data[0].copy(),
        "node_probs": node_p.copy(),
        "kind_probs": kind_probs.copy(),
    }
    if sdot_ext is not None:
        from ..otmap import apply_extension

        info["code"] = apply_extension(sdot_ext, fwd.x.data[0])
    return ActResult(
        node=node,
        kind=KIND_ORDER[kind_idx],
        target=graph.refs[node],
        logp=logp,
        value=float(fwd.value.data[0, 0]),
        info=info,
    )


def evaluate_actions(
    store: ParamStore,
    config: PolicyConfig,
    batched: BatchedGraph,
    nodes: np.ndarray,
    kinds: np.ndarray,
) -> tuple[Tensor, Tensor, Tensor, PolicyForward]:
    """Differentiable log-probs, entropies and values for stored actions.

    ``nodes`` are per-graph node indices, ``kinds`` are kind-order indices.
    Shares the forward pass with act(), so the two agree to rounding.
    """
    flat_nodes = batched.offsets[:-1] + np.asarray(nodes, dtype=np.int64)
    fwd = policy_forward(store, config, batched)

    chosen_node_p = reshape(
        gather_rows(reshape(fwd.node_probs, (batched.n_nodes, 1)), flat_nodes),
        (batched.n_graphs,),
    )
    kind_probs = kind_distribution(store, config, fwd, batched, flat_nodes)
    onehot = np.zeros((batched.n_graphs, N_KINDS))
    onehot[np.arange(batched.n_graphs), kinds] = 1.0
    chosen_kind_p = tsum(kind_probs * constant(onehot), axis=1)
    logp = log(chosen_node_p + LOG_EPS) + log(chosen_kind_p + LOG_EPS)

    node_plogp = fwd.node_probs * log(fwd.node_probs + LOG_EPS)
    node_entropy = -segment_sum(
        reshape(node_plogp, (batched.n_nodes, 1)), batched.graph_ids, batched.n_graphs
    )
    node_entropy = reshape(node_entropy, (batched.n_graphs,))
    kind_entropy = -tsum(kind_probs * log(kind_probs + LOG_EPS), axis=1)
    entropy = node_entropy + kind_entropy

    value = reshape(fwd.value, (batched.n_graphs,))
    return logp, entropy, value, fwd
