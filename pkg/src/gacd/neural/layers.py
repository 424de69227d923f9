"""Layers composed from the tensor primitives.

Everything here is a plain function of (inputs, parameter tensors); parameter
creation and naming live with the caller (see ``params.ParamStore``).  All
graph layers are permutation-equivariant: relabeling nodes and incident
structures relabels the outputs identically.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .tensor import (
    Tensor,
    concat,
    constant,
    embedding,
    exp,
    gather_rows,
    leaky_relu,
    matmul,
    relu,
    rowmax_const,
    segment_sum,
    sigmoid,
    spmm,
    sqrt,
    square,
    tmean,
    tsum,
)

MASK_NEG = 1.0e9


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = out + b
    return out


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(square(centered), axis=-1, keepdims=True)
    out = centered / sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def masked_softmax(logits: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over positions where ``mask`` is truthy; masked entries are exact 0.

    Raises if any row has no valid position.  Invalid logits receive zero
    gradient (they are squashed before the exponential).
    """
    mask = np.asarray(mask, dtype=logits.data.dtype)
    if (mask.sum(axis=axis) == 0).any():
        raise ValueError("masked_softmax: a row has no valid entries")
    squashed = logits * constant(mask) - constant((1.0 - mask) * MASK_NEG)
    shift = rowmax_const(squashed, axis=axis, keepdims=True)
    e = exp(squashed - shift) * constant(mask)
    denom = tsum(e, axis=axis, keepdims=True)
    return e / denom


def mean_pool(x: Tensor, graph_ids: np.ndarray, n_graphs: int) -> Tensor:
    """Per-graph mean of node rows."""
    sums = segment_sum(x, graph_ids, n_graphs)
    counts = np.bincount(np.asarray(graph_ids, dtype=np.int64), minlength=n_graphs)
    if (counts == 0).any():
        raise ValueError("mean_pool: empty graph segment")
    return sums * constant((1.0 / counts.astype(x.data.dtype))[:, None])


def _in_mean_matrix(edges: np.ndarray, n: int) -> sp.csr_matrix:
    """Row v averages over in-neighbors u for every directed edge u -> v."""
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    src = edges[:, 0]
    dst = edges[:, 1]
    indeg = np.bincount(dst, minlength=n).astype(np.float64)
    w = 1.0 / indeg[dst]
    return sp.csr_matrix((w, (dst, src)), shape=(n, n))


def segment_softmax(scores: Tensor, seg: np.ndarray, n_segments: int) -> Tensor:
    """Softmax of ``scores`` grouped by segment id (used for edge attention)."""
    seg = np.asarray(seg, dtype=np.int64)
    shift = np.full(n_segments, -np.inf, dtype=scores.data.dtype)
    np.maximum.at(shift, seg, scores.data)
    e = exp(scores - constant(shift[seg]))
    denom = segment_sum(e, seg, n_segments)
    return e / gather_rows(denom, seg)


def mp_layer(
    x: Tensor,
    edges: np.ndarray,
    w_self: Tensor,
    w_nbr: Tensor,
    b: Tensor,
    kind: str = "gcn",
    gat_params: dict | None = None,
    act=relu,
) -> Tensor:
    """One message-passing round over directed edges (messages flow src -> dst).

    ``kind='gcn'``: incoming messages are averaged.  ``kind='gat'``: incoming
    messages are combined with additive single-head edge attention; extra
    parameters arrive in ``gat_params`` (keys ``a_src``, ``a_dst``).
    Isolated nodes receive a zero message, so an edgeless graph reduces to a
    per-node dense layer.
    """
    n = x.data.shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if kind == "gcn":
        msg = spmm(_in_mean_matrix(edges, n), x)
    elif kind == "gat":
        if len(edges) == 0:
            msg = constant(np.zeros_like(x.data))
        else:
            proj = matmul(x, w_nbr)
            src = gather_rows(proj, edges[:, 0])
            dst = gather_rows(proj, edges[:, 1])
            if gat_params is None:
                raise ValueError("gat kind needs gat_params")
            score = leaky_relu(
                tsum(src * gat_params["a_src"], axis=-1)
                + tsum(dst * gat_params["a_dst"], axis=-1)
            )
            alpha = segment_softmax(score, edges[:, 1], n)
            weighted = src * reshape_col(alpha)
            gathered = segment_sum(weighted, edges[:, 1], n)
            return act(dense(x, w_self, b) + gathered)
    else:
        raise ValueError(f"unknown mp kind {kind!r}")
    return act(dense(x, w_self, b) + matmul(msg, w_nbr))


def reshape_col(v: Tensor) -> Tensor:
    from .tensor import reshape

    return reshape(v, (v.data.shape[0], 1))


def graphormer_layer(
    x: Tensor,
    spd_buckets: np.ndarray,
    node_degrees: np.ndarray,
    p: dict[str, Tensor],
    n_heads: int,
    attn_mask: np.ndarray | None = None,
    act=relu,
    collect_attn: list | None = None,
) -> Tensor:
    """Graph-transformer block: biased full attention + feed-forward.

    Attention logits are ``q k^T / sqrt(d_k)`` plus a learned scalar read from
    a per-head bucket table at the shortest-path-distance bucket of each node
    pair; a learned degree embedding is added to the block input.  Parameter
    dict keys: ``deg`` (max_deg+1, d), ``wq wk wv wo`` (d, d), per-head bias
    tables ``bias0..bias{H-1}`` (n_buckets,), layer-norm affines ``g1 b1 g2
    b2`` and feed-forward ``wf1 bf1 wf2 bf2``.
    """
    n, d = x.data.shape
    if d % n_heads:
        raise ValueError("width must divide evenly into heads")
    dk = d // n_heads
    deg_idx = np.minimum(np.asarray(node_degrees, dtype=np.int64), p["deg"].data.shape[0] - 1)
    h = x + embedding(p["deg"], deg_idx)

    q = matmul(h, p["wq"])
    k = matmul(h, p["wk"])
    v = matmul(h, p["wv"])
    mask = np.ones((n, n)) if attn_mask is None else np.asarray(attn_mask)
    scale = 1.0 / np.sqrt(dk)
    head_outs = []
    from .tensor import transpose

    for i in range(n_heads):
        sl = slice(i * dk, (i + 1) * dk)
        qi = gather_cols(q, sl)
        ki = gather_cols(k, sl)
        vi = gather_cols(v, sl)
        logits = matmul(qi, transpose(ki)) * scale + embedding(p[f"bias{i}"], spd_buckets)
        attn = masked_softmax(logits, mask)
        if collect_attn is not None:
            collect_attn.append(attn.data.copy())
        head_outs.append(matmul(attn, vi))
    o = matmul(concat(head_outs, axis=1), p["wo"])
    h2 = layer_norm(h + o, p["g1"], p["b1"])
    ff = dense(act(dense(h2, p["wf1"], p["bf1"])), p["wf2"], p["bf2"])
    return layer_norm(h2 + ff, p["g2"], p["b2"])


def gather_cols(x: Tensor, sl: slice) -> Tensor:
    """Column slice with gradient routed back into the sliced range."""
    out = Tensor(x.data[:, sl], requires_grad=x.requires_grad)

    from .tensor import _record

    def back(g):
        buf = np.zeros_like(x.data)
        buf[:, sl] = g
        x.accumulate(buf)

    _record(out, back)
    return out


def mlp(x: Tensor, weights: list[tuple[Tensor, Tensor]], act=relu, final=None) -> Tensor:
    """Stack of dense layers; activation between layers, optional final squash."""
    h = x
    for i, (w, b) in enumerate(weights):
        h = dense(h, w, b)
        if i < len(weights) - 1:
            h = act(h)
    if final is not None:
        h = final(h)
    return h
