"""Loss compositions: PPO + transport terms, and the variational pretrainer.

The m1/m2 objective couples policy learning to the transport layer: every
latent code is pushed (through the forward map) toward the centroid of the
transport cell it lands in, and the Monte-Carlo transport cost of the batch
is charged directly.  Assignments are computed on detached coordinates — the
cell boundary is a measure-zero set, so the piecewise-constant assignment
carries no useful gradient anyway.

The m3 pretrainer is a variational graph autoencoder: per-node Gaussian
latents, inner-product adjacency decoder against the mutual skeleton plus
self-loops, a feature head, and the usual KL-to-unit-Gaussian penalty, summed
with the same transport terms so the frozen encoder lands in a geometry the
downstream map can use.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..graphobs import AttributedGraph, BatchedGraph, batch, shortest_path_distances
from ..neural import (
    ParamStore,
    Tape,
    Tensor,
    backward,
    constant,
    exp,
    gather_rows,
    log,
    matmul,
    sigmoid,
    sqrt,
    square,
    tmean,
    transpose,
    tsum,
)
from ..otmap import (
    CostKind,
    LatentCodes,
    SdotMap,
    assign_cells,
    cell_centroids,
    fit_sdot,
)
from .policy import PolicyConfig, PolicyForward, encode, evaluate_actions, latent_codes_of, noise_coords
from .ppo import ppo_loss

BCE_EPS = 1e-12
NORM_EPS = 1e-12
CODE_WINDOW = 512


def transport_terms(
    x: Tensor, sdot_map: SdotMap, centroids: np.ndarray
) -> tuple[Tensor, Tensor]:
    """(forward-map regression, Monte-Carlo transport cost) for a batch of x rows.

    Each row is assigned to its transport cell; the regression term pulls it
    toward that cell's centroid (a sampled barycenter), the transport term
    charges the squared distance to the cell's code.
    """
    assign = assign_cells(x.data, sdot_map)
    code_rows = sdot_map.codes.z[assign]
    l_fgw = tmean(tsum(square(x - constant(code_rows)), axis=1))
    diff = x - constant(centroids[assign])
    l_mse = tmean(sqrt(tsum(square(diff), axis=1) + NORM_EPS))
    return l_mse, l_fgw


def loss_m1_m2(
    store: ParamStore,
    config: PolicyConfig,
    batched: BatchedGraph,
    nodes: np.ndarray,
    kinds: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    sdot_map: SdotMap | None,
    centroids: np.ndarray | None,
    *,
    clip: float = 0.2,
    value_coef: float = 0.5,
    ent_coef: float = 0.01,
    w_mse: float = 1.0,
    w_fgw: float = 1.0,
) -> tuple[Tensor, dict[str, float], PolicyForward]:
    """PPO + weighted transport terms; logged parts sum to the total exactly.

    With no fitted map (transport disabled, or the m3 frozen-encoder phase)
    the transport terms are zero and this reduces to plain PPO.
    """
    logp, entropy, value, fwd = evaluate_actions(store, config, batched, nodes, kinds)
    l_ppo, ppo_parts = ppo_loss(
        logp,
        value,
        entropy,
        logp_old,
        advantages,
        returns,
        clip=clip,
        value_coef=value_coef,
        ent_coef=ent_coef,
    )
    if sdot_map is None:
        parts = {"l_ppo": float(l_ppo.data), "l_mse": 0.0, "l_fgw": 0.0, **ppo_parts}
        return l_ppo, parts, fwd
    if centroids is None:
        centroids = cell_centroids(sdot_map)
    l_mse, l_fgw = transport_terms(fwd.x, sdot_map, centroids)
    mse_term = w_mse * l_mse
    fgw_term = w_fgw * l_fgw
    total = l_ppo + mse_term + fgw_term
    parts = {
        "l_ppo": float(l_ppo.data),
        "l_mse": float(mse_term.data),
        "l_fgw": float(fgw_term.data),
        **ppo_parts,
    }
    return total, parts, fwd


# ---------------------------------------------------------------------------
# variational graph autoencoder (m3 pretraining)


def adjacency_target(graph: AttributedGraph) -> np.ndarray:
    """Mutual-skeleton adjacency plus self-loops, as 0/1 floats."""
    spd = shortest_path_distances(graph)
    return ((spd == 1) | np.eye(graph.n, dtype=bool)).astype(np.float64)


def decode_graph(
    store: ParamStore,
    node_emb: Tensor,
    noise: np.ndarray | None = None,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Inner-product decoder for one graph's node embeddings.

    Returns (adjacency probabilities, feature reconstruction, mu, logvar).
    With ``noise`` the latent is the reparametrized sample mu + sigma * noise;
    without, the mean is used (deterministic, for evaluation).
    """
    mu = matmul(node_emb, store["dec.mu.w"]) + store["dec.mu.b"]
    logvar = matmul(node_emb, store["dec.logvar.w"]) + store["dec.logvar.b"]
    if noise is None:
        h = mu
    else:
        h = mu + exp(logvar * 0.5) * constant(noise)
    adj = sigmoid(matmul(h, transpose(h)))
    feats = matmul(h, store["dec.feat.w"]) + store["dec.feat.b"]
    return adj, feats, mu, logvar


def vgae_recon_loss(
    adj_probs: Tensor,
    features_hat: Tensor,
    graph: AttributedGraph,
    mu: Tensor | None = None,
    logvar: Tensor | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Adjacency cross-entropy + feature squared error + optional KL, all means.

    The adjacency term averages over every (i, j) slot, so a constant 0.5
    prediction scores exactly log 2.  KL is averaged per latent coordinate
    and omitted when mu/logvar are not supplied.
    """
    target = constant(adjacency_target(graph))
    bce = -tmean(
        target * log(adj_probs + BCE_EPS)
        + (1.0 - target) * log(1.0 - adj_probs + BCE_EPS)
    )
    feat = tmean(square(features_hat - constant(graph.features)))
    if mu is None:
        total = bce + feat
        return total, {"bce": float(bce.data), "feat": float(feat.data), "kl": 0.0}
    kl = -0.5 * tmean(1.0 + logvar - square(mu) - exp(logvar))
    total = bce + feat + kl
    return total, {
        "bce": float(bce.data),
        "feat": float(feat.data),
        "kl": float(kl.data),
    }


def adjacency_auc(store: ParamStore, config: PolicyConfig, graph: AttributedGraph) -> float:
    """Rank AUC of the mean-latent adjacency scores against the true skeleton."""
    node_emb, _ = encode(store, config, batch([graph]))
    mu = (matmul(node_emb, store["dec.mu.w"]) + store["dec.mu.b"]).data
    scores = (mu @ mu.T).reshape(-1)
    labels = adjacency_target(graph).reshape(-1)
    pos, neg = int(labels.sum()), int((1 - labels).sum())
    if pos == 0 or neg == 0:
        raise ValueError("adjacency AUC needs both edge and non-edge slots")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - pos * (pos + 1) / 2) / (pos * neg))


def _corpus_latents(
    store: ParamStore, config: PolicyConfig, corpus: list[AttributedGraph]
) -> np.ndarray:
    out = []
    for i in range(0, len(corpus), 32):
        b = batch(corpus[i : i + 32])
        _, graph_emb = encode(store, config, b)
        out.append(latent_codes_of(store, graph_emb).data)
    return np.concatenate(out, axis=0)


def fit_latent_sdot(z: np.ndarray, seed: int, window: int = CODE_WINDOW) -> SdotMap:
    """Fit the transport map on the trailing window of latent codes.

    The dual-ascent step is scaled to the spread of transport costs seen from
    the box center: tightly clustered codes need potentials that differ by a
    comparable hair, so the default aggressive step overshoots forever.  The
    tolerance loosens progressively rather than failing — mid-training code
    clouds are sometimes badly conditioned and an approximate map is still a
    useful training signal.
    """
    codes = LatentCodes.from_rows(z[-window:])
    center_costs = ((codes.z - 0.5) ** 2).sum(axis=1)
    lr = max(0.05, 2.0 * float(center_costs.max() - center_costs.min()))
    for eps in (0.05, 0.2, 1.1):
        try:
            return fit_sdot(
                codes,
                CostKind.SQUARED_EUCLIDEAN,
                mc_samples=max(2048, 10 * codes.t),
                iters=400,
                seed=seed,
                eps_mass=eps,
                attempts=2,
                lr=lr,
            )
        except RuntimeError:
            continue
    raise AssertionError("unreachable: tolerance above 1 always verifies")


def pretrain_m3(
    store: ParamStore,
    config: PolicyConfig,
    corpus: list[AttributedGraph],
    *,
    epochs: int = 150,
    lr: float = 1e-3,
    batch_size: int = 8,
    w_ot: float = 1.0,
    refit_every: int = 50,
    seed: int = 0,
) -> dict[str, list[float]]:
    """Train encoder+decoder on reconstruction plus transport terms, then freeze.

    Minimizes L_AE + w_ot * (regression + transport cost) over shuffled graph
    minibatches; the semi-discrete map is refit periodically as the latent
    cloud drifts.  On return the encoder prefix is frozen, so later PPO
    updates leave it bit-identical.
    """
    if config.variant != "m3":
        raise ValueError("pretraining applies to the m3 variant only")
    if not corpus:
        raise ValueError("empty pretraining corpus")
    rng = np.random.default_rng([seed, 0x93AE])
    sdot = fit_latent_sdot(_corpus_latents(store, config, corpus), seed)
    centroids = cell_centroids(sdot)
    history: dict[str, list[float]] = {"l_ae": [], "l_ot": [], "total": []}

    for epoch in range(epochs):
        order = rng.permutation(len(corpus))
        ep_ae, ep_ot, ep_total, n_batches = 0.0, 0.0, 0.0, 0
        for lo in range(0, len(corpus), batch_size):
            graphs = [corpus[i] for i in order[lo : lo + batch_size]]
            with Tape() as tape:
                batched = batch(graphs)
                node_emb, graph_emb = encode(store, config, batched)
                z = latent_codes_of(store, graph_emb)
                x = noise_coords(store, config, z)
                l_mse, l_fgw = transport_terms(x, sdot, centroids)
                ae_terms = []
                for gi, g in enumerate(graphs):
                    idx = np.arange(batched.offsets[gi], batched.offsets[gi + 1])
                    emb_g = gather_rows(node_emb, idx)
                    noise = rng.standard_normal((g.n, config.latent_dim))
                    adj, feats, mu, logvar = decode_graph(store, emb_g, noise)
                    term, _ = vgae_recon_loss(adj, feats, g, mu, logvar)
                    ae_terms.append(term)
                l_ae = sum(ae_terms[1:], ae_terms[0]) * (1.0 / len(ae_terms))
                l_ot = l_mse + l_fgw
                total = l_ae + w_ot * l_ot
                store.zero_grad()
                backward(tape, total)
            store.adam_step(lr)
            ep_ae += float(l_ae.data)
            ep_ot += float(l_ot.data)
            ep_total += float(total.data)
            n_batches += 1
        history["l_ae"].append(ep_ae / n_batches)
        history["l_ot"].append(ep_ot / n_batches)
        history["total"].append(ep_total / n_batches)
        if np.isnan(history["total"][-1]):
            raise RuntimeError("pretraining diverged (loss is NaN)")
        if refit_every and (epoch + 1) % refit_every == 0 and epoch + 1 < epochs:
            sdot = fit_latent_sdot(_corpus_latents(store, config, corpus), seed + epoch + 1)
            centroids = cell_centroids(sdot)

    store.freeze("enc.")
    return history
