"""Attributed-graph encoding of simulator observations.

Nodes are subnets, then hosts (both in scenario order), then decoys (in
deployment order).  Each node carries a 7-value feature row::

    [subnet, host, decoy | activity bit1, bit0 | compromised bit1, bit0]

The first three values one-hot the node kind.  The two 2-bit fields encode the
blue-visible state codes; subnet and decoy nodes keep them zero-filled.

Code tables (most significant bit first):

    activity     None=00  Scan=01  Exploit=10  Unknown=11
    compromised  No=00    Unknown=01  User=10   Privileged=11

Edges are directed: host<->subnet membership (both ways), the scenario's ACL
edges verbatim (one-way entries stay one-way), and for each decoy an edge from
its shielded source host into the decoy node plus an edge from the decoy node
to its lure target.

Hop distances and node degrees are measured on the mutual skeleton: only node
pairs linked in both directions count as adjacent, so one-way ACL edges and
decoy wiring do not shorten paths.  Unreachable pairs get ``UNREACHABLE``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .cybersim import Activity, CompromiseSeen, Observation
from .scenario import Scenario

N_FEATURES = 7
UNREACHABLE = -1


class NodeKind(enum.IntEnum):
    SUBNET = 0
    HOST = 1
    DECOY = 2


ACTIVITY_BITS = {
    Activity.NONE: (0, 0),
    Activity.SCAN: (0, 1),
    Activity.EXPLOIT: (1, 0),
    Activity.UNKNOWN: (1, 1),
}

COMPROMISED_BITS = {
    CompromiseSeen.NO: (0, 0),
    CompromiseSeen.UNKNOWN: (0, 1),
    CompromiseSeen.USER: (1, 0),
    CompromiseSeen.PRIVILEGED: (1, 1),
}


def encode_state_bits(activity: Activity, compromised: CompromiseSeen) -> np.ndarray:
    """Four bits, activity pair first, most significant bit first."""
    a = ACTIVITY_BITS[activity]
    c = COMPROMISED_BITS[compromised]
    return np.array([a[0], a[1], c[0], c[1]], dtype=np.float64)


@dataclass(frozen=True)
class AttributedGraph:
    """One observation as a graph; arrays are row-major float64/int64."""

    features: np.ndarray  # (n, 7)
    edges: np.ndarray  # (e, 2) directed index pairs
    kinds: np.ndarray  # (n,) NodeKind values
    refs: tuple[str, ...]  # subnet id / host id / "decoy:<source>"

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def host_mask(self) -> np.ndarray:
        return self.kinds == NodeKind.HOST

    @property
    def decoyed_mask(self) -> np.ndarray:
        """Hosts that currently carry a decoy (an out-edge into a decoy node)."""
        out = np.zeros(self.n, dtype=bool)
        for u, v in self.edges:
            if self.kinds[v] == NodeKind.DECOY and self.kinds[u] == NodeKind.HOST:
                out[u] = True
        return out

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AttributedGraph)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.kinds, other.kinds)
            and self.refs == other.refs
        )


def observation_to_graph(scenario: Scenario, obs: Observation) -> AttributedGraph:
    refs: list[str] = [s.id for s in scenario.subnets]
    kinds: list[int] = [NodeKind.SUBNET] * len(scenario.subnets)
    for h in scenario.hosts:
        refs.append(h.id)
        kinds.append(NodeKind.HOST)
    for d in obs.decoys:
        refs.append(f"decoy:{d.source}")
        kinds.append(NodeKind.DECOY)
    index = {r: i for i, r in enumerate(refs)}

    rows_by_host = {r.host: r for r in obs.rows}
    feats = np.zeros((len(refs), N_FEATURES), dtype=np.float64)
    for i, (ref, kind) in enumerate(zip(refs, kinds)):
        feats[i, kind] = 1.0
        if kind == NodeKind.HOST:
            row = rows_by_host[ref]
            feats[i, 3:] = encode_state_bits(row.activity, row.compromised)

    edges: list[tuple[int, int]] = []
    for h in scenario.hosts:
        hi, si = index[h.id], index[h.subnet]
        edges.append((hi, si))
        edges.append((si, hi))
    for a, b in scenario.acl_edges:
        edges.append((index[a], index[b]))
    for d in obs.decoys:
        di = index[f"decoy:{d.source}"]
        edges.append((index[d.source], di))
        edges.append((di, index[d.lure]))

    return AttributedGraph(
        features=feats,
        edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
        kinds=np.array(kinds, dtype=np.int64),
        refs=tuple(refs),
    )


def flat_bits(scenario: Scenario, obs: Observation) -> np.ndarray:
    """Baseline encoding: per-host 4 state bits in fixed scenario order (4*N)."""
    rows_by_host = {r.host: r for r in obs.rows}
    out = np.zeros(4 * scenario.n_hosts, dtype=np.float64)
    for i, h in enumerate(scenario.hosts):
        row = rows_by_host[h.id]
        out[4 * i : 4 * i + 4] = encode_state_bits(row.activity, row.compromised)
    return out


# ---------------------------------------------------------------------------
# graph utilities


def _mutual_neighbors(graph: AttributedGraph) -> list[set[int]]:
    directed = {(int(u), int(v)) for u, v in graph.edges}
    nbrs: list[set[int]] = [set() for _ in range(graph.n)]
    for u, v in directed:
        if u != v and (v, u) in directed:
            nbrs[u].add(v)
    return nbrs


def shortest_path_distances(graph: AttributedGraph) -> np.ndarray:
    """All-pairs BFS hop counts on the mutual skeleton; UNREACHABLE sentinel."""
    n = graph.n
    nbrs = _mutual_neighbors(graph)
    dist = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for src in range(n):
        dist[src, src] = 0
        frontier = [src]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in nbrs[u]:
                    if dist[src, v] == UNREACHABLE:
                        dist[src, v] = d
                        nxt.append(v)
            frontier = nxt
    return dist


def degrees(graph: AttributedGraph) -> np.ndarray:
    """Mutual-skeleton neighbor counts."""
    return np.array([len(s) for s in _mutual_neighbors(graph)], dtype=np.int64)


def permute(graph: AttributedGraph, sigma: np.ndarray) -> AttributedGraph:
    """Relabel nodes: old index i becomes sigma[i]."""
    sigma = np.asarray(sigma, dtype=np.int64)
    n = graph.n
    if sorted(sigma.tolist()) != list(range(n)):
        raise ValueError("sigma is not a permutation of the node indices")
    feats = np.empty_like(graph.features)
    kinds = np.empty_like(graph.kinds)
    refs = [""] * n
    feats[sigma] = graph.features
    kinds[sigma] = graph.kinds
    for i, r in enumerate(graph.refs):
        refs[sigma[i]] = r
    edges = sigma[graph.edges] if len(graph.edges) else graph.edges
    return AttributedGraph(
        features=feats,
        edges=edges.reshape(-1, 2),
        kinds=kinds,
        refs=tuple(refs),
    )


@dataclass(frozen=True)
class BatchedGraph:
    """Several graphs stacked into one disjoint union."""

    features: np.ndarray  # (sum n_i, 7)
    edges: np.ndarray  # (sum e_i, 2), indices offset per graph
    graph_ids: np.ndarray  # (sum n_i,) which graph each node came from
    offsets: np.ndarray  # (k+1,) node offset of each graph, last = total
    members: tuple[AttributedGraph, ...]

    @property
    def n_graphs(self) -> int:
        return len(self.members)

    @property
    def n_nodes(self) -> int:
        return int(self.features.shape[0])

    def node_slice(self, g: int) -> slice:
        return slice(int(self.offsets[g]), int(self.offsets[g + 1]))


_KIND_NAMES = ("Subnet", "Host", "Decoy")


def graph_to_json(graph: AttributedGraph) -> str:
    """Debug dump: UTF-8 JSON with nodes / edges / features arrays."""
    doc = {
        "nodes": [
            {"ref": r, "kind": _KIND_NAMES[int(k)]}
            for r, k in zip(graph.refs, graph.kinds)
        ],
        "edges": [[int(u), int(v)] for u, v in graph.edges],
        "features": graph.features.tolist(),
    }
    return json.dumps(doc, indent=2)


def graph_from_json(text: str) -> AttributedGraph:
    doc = json.loads(text)
    nodes = doc["nodes"]
    feats = np.asarray(doc["features"], dtype=np.float64).reshape(len(nodes), N_FEATURES)
    kinds = np.array([_KIND_NAMES.index(nd["kind"]) for nd in nodes], dtype=np.int64)
    edges = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= len(nodes)):
        raise ValueError("edge index out of range")
    return AttributedGraph(
        features=feats,
        edges=edges,
        kinds=kinds,
        refs=tuple(nd["ref"] for nd in nodes),
    )


def batch(graphs: list[AttributedGraph]) -> BatchedGraph:
    if not graphs:
        raise ValueError("cannot batch zero graphs")
    offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
    for i, g in enumerate(graphs):
        offsets[i + 1] = offsets[i] + g.n
    feats = np.concatenate([g.features for g in graphs], axis=0)
    edge_parts = [
        g.edges + offsets[i] if len(g.edges) else g.edges.reshape(0, 2)
        for i, g in enumerate(graphs)
    ]
    edges = np.concatenate(edge_parts, axis=0)
    gids = np.concatenate(
        [np.full(g.n, i, dtype=np.int64) for i, g in enumerate(graphs)]
    )
    return BatchedGraph(
        features=feats,
        edges=edges,
        graph_ids=gids,
        offsets=offsets,
        members=tuple(graphs),
    )
