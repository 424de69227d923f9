"""Mid-episode topology switches and the desk-scale experiment drivers.

The experiment functions are exercised at micro budgets: the point here is
plumbing (files, labels, matched seeds, the single-flag ablation diff), not
learning curves.  The one hard behavioural oracle that needs no training is
the null switch: swapping a scenario for itself must be invisible, so a
sleeping defender sees the exact same reward stream with and without it.
"""

import csv
import json
from collections import defaultdict

import numpy as np
import pytest

from gacd.agent import PolicyConfig, build_policy
from gacd.cybersim import (
    BlueAction,
    BlueKind,
    Compromise,
    HostState,
    reset,
    step,
)
from gacd.harness import (
    GacdGreedy,
    SleepOnly,
    experiment_cross_red,
    experiment_ot_ablation,
    experiment_randomization,
    experiment_topology_sweep,
    run_switch_episode,
    switch_scenario,
)
from gacd.scenario import Scenario, ScenarioSpec, generate_scenario, vanilla_cc2


def small_net(seed=2):
    return generate_scenario(ScenarioSpec(ns_range=(3, 3), nh_range=(5, 8)), seed=seed)


# ---------------------------------------------------------------------------
# switch_scenario


def test_null_switch_carries_state_and_drops_decoys():
    scn = vanilla_cc2()
    state, _ = reset(scn, "bline", 7)
    state, sr = step(scn, state, BlueAction(BlueKind.DEPLOY_DECOY, scn.hosts[3].id))
    assert state.decoys
    switched, obs = switch_scenario(scn, scn, state)
    assert switched.red_position == state.red_position
    assert switched.step_index == state.step_index
    assert switched.hosts == state.hosts
    assert switched.decoys == {}
    assert {r.host for r in obs.rows} == {h.id for h in scn.hosts}
    assert obs.decoys == ()


def test_switch_maps_host_state_by_index():
    small, big = small_net(), vanilla_cc2()
    assert len(small.hosts) < len(big.hosts)
    state, _ = reset(small, "bline", 1)
    for _ in range(5):
        state, sr = step(small, state, BlueAction(BlueKind.SLEEP))
    switched, _ = switch_scenario(small, big, state)
    for i, h in enumerate(big.hosts):
        if i < len(small.hosts):
            assert switched.hosts[h.id] == state.hosts[small.hosts[i].id]
        else:
            assert switched.hosts[h.id] == HostState()


def test_red_beyond_the_new_network_gets_a_fresh_foothold():
    small, big = small_net(), vanilla_cc2()
    state, _ = reset(big, "bline", 3)
    state.red_position = big.hosts[-1].id  # index 12: absent from `small`
    switched, _ = switch_scenario(big, small, state)
    start = small.roles.red_start_host
    assert switched.red_position == start
    assert switched.hosts[start].compromise is Compromise.USER
    assert switched.hosts[start].known_to_red
    assert switched.red_visited == {small.subnet_of(start)}


def test_switching_to_an_empty_network_is_rejected():
    scn = vanilla_cc2()
    state, _ = reset(scn, "bline", 0)
    empty = Scenario(subnets=(), hosts=(), acl_edges=(), roles=scn.roles)
    with pytest.raises(ValueError, match="zero hosts"):
        switch_scenario(scn, empty, state)


def test_null_switch_is_invisible_to_a_sleeping_defender():
    scn = vanilla_cc2()
    out = run_switch_episode(SleepOnly(), scn, scn, "bline", 11, switch_step=50)

    state, _ = reset(scn, "bline", 11)
    plain = []
    for _ in range(100):
        state, sr = step(scn, state, BlueAction(BlueKind.SLEEP))
        plain.append(sr.normalized_reward)
        if sr.terminated or sr.truncated:
            break
    # the carried rng generator continues mid-stream, so this is exact
    assert out["rewards"] == plain
    assert not any(out["invalid"])


def test_untrained_graph_policy_stays_valid_through_the_switch():
    policy = GacdGreedy(build_policy(PolicyConfig("m1")), PolicyConfig("m1"))
    scn_a, scn_b = vanilla_cc2(), small_net(seed=9)
    for seed in range(3):
        out = run_switch_episode(
            policy, scn_a, scn_b, "bline", seed, switch_step=30, horizon=60
        )
        assert len(out["rewards"]) == 60  # never truncated by a bad action
        assert not any(out["invalid"][30:])


# ---------------------------------------------------------------------------
# experiment drivers (micro budgets)


def by_condition(path):
    groups = defaultdict(list)
    with open(path) as fh:
        for row in csv.DictReader(fh):
            groups[row["condition"]].append(row)
    return groups


def test_randomization_relabeling_is_invisible_to_the_graph_agent(tmp_path):
    reports = experiment_randomization(
        tmp_path, total_timesteps=96, episodes=3, seed=5
    )
    assert [r.condition for r in reports] == [
        "gacd-plain",
        "gacd-permuted",
        "flat-plain",
        "flat-permuted",
    ]
    groups = by_condition(tmp_path / "episodes.csv")
    plain = [float(r["norm_return"]) for r in groups["gacd-plain"]]
    permuted = [float(r["norm_return"]) for r in groups["gacd-permuted"]]
    assert len(plain) == len(permuted) == 3
    np.testing.assert_allclose(permuted, plain, atol=1e-6)
    with open(tmp_path / "config.json") as fh:
        doc = json.load(fh)
    assert doc["experiment"] == "randomization"
    assert set(doc["conditions"]) == {"gacd", "flat"}


def test_ot_ablation_conditions_differ_in_one_flag(tmp_path):
    reports = experiment_ot_ablation(
        tmp_path,
        total_timesteps=64,
        episodes=2,
        seed=0,
        overrides=dict(
            rollout_steps=32,
            horizon=16,
            minibatch=16,
            pretrain_graphs=12,
            pretrain_epochs=2,
            sdot_refit_every=1,
        ),
    )
    assert [r.condition for r in reports] == ["ot-on", "ot-off"]
    assert all(np.isfinite(r.mean_reward) for r in reports)
    with open(tmp_path / "config.json") as fh:
        doc = json.load(fh)
    on = doc["conditions"]["ot-on"]["config"]
    off = doc["conditions"]["ot-off"]["config"]
    assert {k for k in on if on[k] != off[k]} == {"ot_enabled", "out_dir"}
    assert on["ot_enabled"] and not off["ot_enabled"]


def test_cross_red_covers_all_four_cells(tmp_path):
    reports = experiment_cross_red(tmp_path, total_timesteps=64, episodes=2, seed=1)
    labels = [r.condition for r in reports]
    assert labels == [
        "bline->bline",
        "bline->meander",
        "meander->bline",
        "meander->meander",
    ]
    assert all(np.isfinite(r.mean_reward) for r in reports)
    assert all(r.episodes == 2 for r in reports)


def test_topology_sweep_writes_a_cell_per_condition(tmp_path):
    reports = experiment_topology_sweep(
        tmp_path, counts=(1, 2), variants=("m1",), total_timesteps=64, episodes=2, seed=0
    )
    assert [r.condition for r in reports] == ["m1@1", "m1@2"]
    groups = by_condition(tmp_path / "episodes.csv")
    assert {k: len(v) for k, v in groups.items()} == {"m1@1": 2, "m1@2": 2}
    assert (tmp_path / "m1_t2" / "policy.ckpt").exists()
    with open(tmp_path / "config.json") as fh:
        doc = json.load(fh)
    assert doc["conditions"]["m1@2"]["config"]["n_topologies"] == 2
