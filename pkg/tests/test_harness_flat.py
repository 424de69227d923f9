import csv
import json

import numpy as np
import pytest

from gacd.cybersim import BlueKind, reset, step, uniform_random_blue
from gacd.harness import (
    ABSENT_TARGET,
    FlatGreedy,
    RandomBlue,
    TrainConfig,
    build_flat,
    build_scenarios,
    eval_episodes,
    flat_act,
    flat_forward,
    load_policy,
    obs_vector,
    train,
)
from gacd.harness.flat import action_for
from gacd.scenario import generate_scenario, ScenarioSpec, vanilla_cc2


def midgame(n_steps=10, seed=4):
    scn = vanilla_cc2()
    rng = np.random.default_rng(seed)
    state, obs = reset(scn, "bline", seed)
    for _ in range(n_steps):
        state, sr = step(scn, state, uniform_random_blue(scn, rng))
        obs = sr.observation
        if sr.terminated or sr.truncated:
            break
    return scn, obs


def test_observation_vector_length_is_4n():
    scn, obs = midgame(0)
    assert obs_vector(scn, obs).shape == (4 * len(scn.hosts),)


def test_permuted_order_changes_the_vector():
    scn, obs = midgame(12)
    vec = obs_vector(scn, obs)
    inv = np.argsort(np.random.default_rng(0).permutation(len(scn.hosts)))
    shuffled = obs_vector(scn, obs, inv)
    assert shuffled.shape == vec.shape
    assert not np.array_equal(shuffled, vec)
    # same multiset of per-host rows, different slots
    a = np.sort(vec.reshape(-1, 4), axis=0)
    b = np.sort(shuffled.reshape(-1, 4), axis=0)
    assert np.array_equal(a, b)


def test_action_decoding_host_major_kind_minor():
    scn = vanilla_cc2()
    sleep = action_for(scn, 0)
    assert sleep.kind is BlueKind.SLEEP and sleep.target is None
    a = action_for(scn, 7)  # host 1, kind 2
    assert a.kind is BlueKind.REMOVE
    assert a.target == scn.hosts[1].id


def test_action_decoding_follows_slot_reordering():
    scn = vanilla_cc2()
    inv = np.argsort(np.random.default_rng(1).permutation(len(scn.hosts)))
    a = action_for(scn, 5 * 3 + 4, inv)  # slot 3, deploy decoy
    assert a.kind is BlueKind.DEPLOY_DECOY
    assert a.target == scn.hosts[int(inv[3])].id


def test_forward_rows_are_distributions():
    scn, obs = midgame(6)
    store = build_flat(len(scn.hosts), seed=3)
    vecs = np.stack([obs_vector(scn, obs), np.zeros(4 * len(scn.hosts))])
    probs, value = flat_forward(store, vecs)
    assert probs.data.shape == (2, 5 * len(scn.hosts))
    assert np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)
    assert value.data.shape == (2, 1)


def test_flat_act_greedy_is_deterministic_sampling_needs_rng():
    scn, obs = midgame(3)
    store = build_flat(len(scn.hosts))
    vec = obs_vector(scn, obs)
    a1, logp1, _ = flat_act(store, vec, greedy=True)
    a2, logp2, _ = flat_act(store, vec, greedy=True)
    assert (a1, logp1) == (a2, logp2)
    with pytest.raises(ValueError, match="generator"):
        flat_act(store, vec)


def test_greedy_wrapper_rejects_mismatched_network():
    policy = FlatGreedy(build_flat(13), n_hosts=13)
    other = generate_scenario(ScenarioSpec(nh_range=(15, 20)), seed=0)
    assert len(other.hosts) != 13
    _, obs = reset(other, "bline", 0)
    with pytest.raises(ValueError, match="feature width"):
        policy.plan(other, obs)


def test_adapted_wrapper_pads_and_truncates():
    policy = FlatGreedy(build_flat(13), n_hosts=13, adapt=True)
    small = generate_scenario(ScenarioSpec(ns_range=(3, 3), nh_range=(5, 8)), seed=2)
    big = generate_scenario(ScenarioSpec(nh_range=(15, 20)), seed=0)
    for scn in (small, big):
        _, obs = reset(scn, "bline", 0)
        action = policy.plan(scn, obs)  # no size complaints either way
        if action.kind is not BlueKind.SLEEP and action.target != ABSENT_TARGET:
            assert action.target in {h.id for h in scn.hosts}


def test_train_flat_smoke_and_meta(tmp_path):
    cfg = TrainConfig(
        variant="flat",
        red_kinds=("bline",),
        total_timesteps=128,
        rollout_steps=64,
        horizon=20,
        out_dir=str(tmp_path),
    )
    ckpt = train(cfg)
    with open(str(ckpt) + ".meta.json") as fh:
        meta = json.load(fh)
    assert meta["kind"] == "flat"
    assert meta["n_hosts"] == 13
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert all(float(r["L_mse"]) == 0.0 for r in rows)


def test_flat_needs_equal_host_counts(tmp_path):
    base = TrainConfig(topology_source="psg", n_topologies=2, variant="flat")
    seed = next(
        s
        for s in range(20)
        if len({len(x.hosts) for x in build_scenarios(TrainConfig(
            topology_source="psg", n_topologies=2, seed=s))}) > 1
    )
    cfg = TrainConfig(
        variant="flat",
        topology_source="psg",
        n_topologies=2,
        seed=seed,
        total_timesteps=32,
        rollout_steps=16,
        horizon=8,
        out_dir=str(tmp_path),
    )
    with pytest.raises(ValueError, match="host counts"):
        train(cfg)


def test_trained_flat_beats_random_blue_on_its_topology(tmp_path):
    cfg = TrainConfig(
        variant="flat",
        red_kinds=("bline",),
        total_timesteps=1536,
        rollout_steps=256,
        out_dir=str(tmp_path),
    )
    ckpt = train(cfg)
    policy, _ = load_policy(ckpt)
    ours = eval_episodes(policy, [vanilla_cc2()], "bline", 8, seed=21)
    rand = eval_episodes(RandomBlue(), [vanilla_cc2()], "bline", 8, seed=21)
    assert np.mean([r["norm_return"] for r in ours]) > np.mean(
        [r["norm_return"] for r in rand]
    )
