import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gacd import cybersim as cs
from gacd.cybersim import Activity, BlueAction, BlueKind, CompromiseSeen, reset, step
from gacd.graphobs import (
    UNREACHABLE,
    NodeKind,
    batch,
    degrees,
    encode_state_bits,
    flat_bits,
    observation_to_graph,
    permute,
    shortest_path_distances,
)
from gacd.scenario import ScenarioSpec, er_scenario, generate_scenario, vanilla_cc2


def fresh_graph(seed=1, red="bline"):
    s = vanilla_cc2()
    state, obs = reset(s, red, seed=seed)
    return s, state, observation_to_graph(s, obs)


def test_state_bit_tables():
    got = encode_state_bits(Activity.EXPLOIT, CompromiseSeen.USER)
    assert got.tolist() == [1, 0, 1, 0]
    assert encode_state_bits(Activity.NONE, CompromiseSeen.NO).tolist() == [0, 0, 0, 0]
    assert encode_state_bits(Activity.SCAN, CompromiseSeen.UNKNOWN).tolist() == [0, 1, 0, 1]
    assert encode_state_bits(Activity.UNKNOWN, CompromiseSeen.PRIVILEGED).tolist() == [1, 1, 1, 1]
    # all sixteen pairs are distinct
    seen = {
        tuple(encode_state_bits(a, c))
        for a, c in itertools.product(Activity, CompromiseSeen)
    }
    assert len(seen) == 16


def test_vanilla_reset_graph_shape():
    s, _, g = fresh_graph()
    assert g.n == 16
    assert g.features.shape == (16, 7)
    assert g.host_mask.sum() == 13
    assert (g.kinds[:3] == NodeKind.SUBNET).all()
    # subnet nodes: one-hot kind, zero-filled state codes
    assert g.features[0].tolist() == [1, 0, 0, 0, 0, 0, 0]
    # host nodes carry the host one-hot
    host_rows = g.features[g.host_mask]
    assert (host_rows[:, 1] == 1).all()
    assert (host_rows[:, [0, 2]] == 0).all()
    assert g.refs[:3] == ("user", "enterprise", "operational")
    assert set(g.refs[3:]) == set(s.host_ids)


def test_vanilla_hop_distances():
    _, _, g = fresh_graph()
    d = shortest_path_distances(g)
    idx = {r: i for i, r in enumerate(g.refs)}
    # the classic chain: user host -> user -> enterprise -> operational -> server
    assert d[idx["User0"], idx["Op_Server0"]] == 4
    # the one-way operational->user link must not shorten anything
    assert d[idx["user"], idx["operational"]] == 2
    assert d[idx["User0"], idx["User4"]] == 2
    assert d[idx["Defender"], idx["Op_Host1"]] == 3
    assert (d == d.T).all()
    assert (np.diag(d) == 0).all()


def test_edgeless_distances_use_sentinel():
    _, _, g = fresh_graph()
    import dataclasses

    bare = dataclasses.replace(g, edges=np.zeros((0, 2), dtype=np.int64))
    d = shortest_path_distances(bare)
    assert (np.diag(d) == 0).all()
    off = ~np.eye(g.n, dtype=bool)
    assert (d[off] == UNREACHABLE).all()


def test_degrees_on_vanilla():
    _, _, g = fresh_graph()
    deg = degrees(g)
    idx = {r: i for i, r in enumerate(g.refs)}
    assert deg[idx["User0"]] == 1
    assert deg[idx["user"]] == 6  # five member hosts + enterprise (mutual only)
    assert deg[idx["enterprise"]] == 6  # four hosts + user + operational
    assert deg[idx["operational"]] == 5  # four hosts + enterprise


def test_decoy_adds_node_and_two_one_way_edges():
    s = vanilla_cc2()
    state, obs = reset(s, "bline", seed=3)
    g0 = observation_to_graph(s, obs)
    state, res = step(s, state, BlueAction(BlueKind.DEPLOY_DECOY, "Op_Server0"))
    g1 = observation_to_graph(s, res.observation)
    assert g1.n == g0.n + 1
    assert len(g1.edges) == len(g0.edges) + 2
    di = g1.n - 1
    assert g1.kinds[di] == NodeKind.DECOY
    assert g1.refs[di] == "decoy:Op_Server0"
    idx = {r: i for i, r in enumerate(g1.refs)}
    pairs = {(int(u), int(v)) for u, v in g1.edges}
    assert (idx["Op_Server0"], di) in pairs
    # the lure edge points at red's seat at deploy time (the start host)
    assert (di, idx["User0"]) in pairs
    assert (di, idx["Op_Server0"]) not in pairs
    assert g1.decoyed_mask[idx["Op_Server0"]]
    assert g1.decoyed_mask.sum() == 1
    # decoy nodes keep zero-filled state codes
    assert g1.features[di].tolist() == [0, 0, 1, 0, 0, 0, 0]
    # one-way decoy wiring is invisible to hop distances
    d = shortest_path_distances(g1)
    assert (d[di, :di] == UNREACHABLE).all()


def test_activity_bits_reach_features():
    s = vanilla_cc2()
    state, obs = reset(s, "bline", seed=3)
    state.hosts["Enterprise1"].compromise = cs.Compromise.USER
    state.hosts["Enterprise1"].suspected = True
    state, res = step(s, state, BlueAction(BlueKind.SLEEP))
    g = observation_to_graph(s, res.observation)
    idx = {r: i for i, r in enumerate(g.refs)}
    assert g.features[idx["Enterprise1"], 5:].tolist() == [0, 1]  # Unknown


def permutation_strategy(n):
    return st.permutations(range(n)).map(lambda p: np.array(p, dtype=np.int64))


@settings(max_examples=30, deadline=None)
@given(data=st.data())
def test_permute_is_a_group_action(data):
    _, _, g = fresh_graph()
    s1 = data.draw(permutation_strategy(g.n))
    s2 = data.draw(permutation_strategy(g.n))
    left = permute(permute(g, s1), s2)
    right = permute(g, s2[s1])
    assert left == right
    ident = np.arange(g.n)
    assert permute(g, ident) == g
    # inverse undoes
    inv = np.empty_like(s1)
    inv[s1] = ident
    assert permute(permute(g, s1), inv) == g


def test_permute_moves_features_and_distances_together():
    _, _, g = fresh_graph()
    rng = np.random.default_rng(0)
    sigma = rng.permutation(g.n)
    pg = permute(g, sigma)
    assert np.array_equal(pg.features[sigma], g.features)
    assert pg.refs[sigma[5]] == g.refs[5]
    d, pd = shortest_path_distances(g), shortest_path_distances(pg)
    assert np.array_equal(pd[np.ix_(sigma, sigma)], d)
    assert np.array_equal(degrees(pg)[sigma], degrees(g))


def test_permute_rejects_non_permutation():
    _, _, g = fresh_graph()
    with pytest.raises(ValueError):
        permute(g, np.zeros(g.n, dtype=np.int64))


def test_batch_concatenates_with_offsets():
    s = vanilla_cc2()
    graphs = []
    for seed in range(3):
        _, obs = reset(s, "bline", seed=seed)
        graphs.append(observation_to_graph(s, obs))
    spec = ScenarioSpec(ns_range=(2, 2), nh_range=(4, 4))
    s2 = generate_scenario(spec, 0)
    _, obs2 = reset(s2, "meander", seed=0)
    graphs.append(observation_to_graph(s2, obs2))

    b = batch(graphs)
    assert b.n_graphs == 4
    assert b.n_nodes == sum(g.n for g in graphs)
    assert b.offsets.tolist() == [0, 16, 32, 48, 54]
    for i, g in enumerate(graphs):
        sl = b.node_slice(i)
        assert np.array_equal(b.features[sl], g.features)
        assert (b.graph_ids[sl] == i).all()
    # edges stay within their graph's node range
    for u, v in b.edges:
        assert b.graph_ids[u] == b.graph_ids[v]
    total_edges = sum(len(g.edges) for g in graphs)
    assert len(b.edges) == total_edges
    assert batch([graphs[0]]).features.shape == graphs[0].features.shape


def test_er_scenario_graph_host_level_edges():
    s = er_scenario(5, 0.6, seed=2)
    _, obs = reset(s, "bline", seed=0)
    g = observation_to_graph(s, obs)
    assert g.n == 6  # one subnet node + five hosts
    d = shortest_path_distances(g)
    # all hosts share the subnet hub, nothing exceeds two hops
    assert d.max() <= 2


def test_flat_bits_layout():
    s = vanilla_cc2()
    state, obs = reset(s, "bline", seed=3)
    v = flat_bits(s, obs)
    assert v.shape == (4 * 13,)
    assert (v == 0).all()
    state.hosts["User2"].compromise = cs.Compromise.USER
    state.hosts["User2"].suspected = True
    state, res = step(s, state, BlueAction(BlueKind.SLEEP))
    v = flat_bits(s, res.observation)
    i = list(s.host_ids).index("User2")
    assert v[4 * i : 4 * i + 4].tolist()[2:] == [0, 1]


def test_graph_json_round_trip():
    from gacd.graphobs import graph_from_json, graph_to_json

    s = vanilla_cc2()
    state, obs = reset(s, "bline", seed=5)
    state, res = step(s, state, BlueAction(BlueKind.DEPLOY_DECOY, "Enterprise1"))
    g = observation_to_graph(s, res.observation)
    text = graph_to_json(g)
    back = graph_from_json(text)
    assert back == g
    import json

    doc = json.loads(text)
    assert set(doc) == {"nodes", "edges", "features"}
    doc["edges"][0] = [0, 99]
    with pytest.raises(ValueError):
        graph_from_json(json.dumps(doc))
