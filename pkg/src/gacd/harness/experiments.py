"""Desk-scale experiment reproductions.

Five studies, each writing ``report.csv`` (one summary row per condition),
``episodes.csv`` (the raw per-episode material the summaries reduce), and
``config.json`` (seed, per-condition training configs with their hashes, and
the package version) into its own directory:

* topology sweep   — reward vs. number of training topologies, per variant;
* randomization    — matched-seed evaluation with and without per-episode
                     host relabeling, for the graph agent and the flat one;
* dynamic switch   — swap the live network mid-episode and compare per-step
                     reward before/after, including a null (A to A) switch;
* transport ablation — m3 with the latent transport map on vs. replaced by
                     the identity, equal budgets otherwise;
* cross red        — train against one scripted attacker, evaluate against
                     the other, both directions plus same-red controls.

Budgets default to the desk scale (tens of thousands of steps, dozens to a
hundred evaluation episodes); published full-scale numbers are treated as
directional references only, never asserted.

The mid-episode switch maps state across by host position: host i of the old
network hands its state to host i of the new one, surplus hosts start clean,
and blue's decoys are dropped.  Red keeps its seat if that position still
exists, otherwise it restarts from the new network's entry host.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from .. import __version__
from ..cybersim import Compromise, HostState, Observation, WorldState, observe, reset, step
from ..scenario import Scenario, ScenarioSpec, generate_scenario
from .config import ExperimentReport, TrainConfig, config_hash, report_from_returns
from .train import (
    LANE_EVAL,
    _fold,
    build_scenarios,
    eval_episodes,
    load_policy,
    train,
    write_csv,
    write_report_csv,
)

LANE_SWITCH_TARGET = 0xB00

SWEEP_COUNTS = (4, 8, 16)
SWEEP_VARIANTS = ("m1", "m2", "m3")


# ---------------------------------------------------------------------------
# mid-episode topology switch


def switch_scenario(
    old: Scenario, new: Scenario, state: WorldState
) -> tuple[WorldState, Observation]:
    """Carry a live episode onto a different network (see module docstring)."""
    if not new.hosts:
        raise ValueError("cannot switch to a scenario with zero hosts")
    s = copy.deepcopy(state)
    hosts = {}
    for i, h in enumerate(new.hosts):
        if i < len(old.hosts):
            hosts[h.id] = s.hosts[old.hosts[i].id]
        else:
            hosts[h.id] = HostState()
    old_index = {h.id: i for i, h in enumerate(old.hosts)}
    ri = old_index[s.red_position]
    if ri < len(new.hosts):
        red_pos = new.hosts[ri].id
    else:
        red_pos = new.roles.red_start_host
        hosts[red_pos] = HostState(
            compromise=Compromise.USER, known_to_red=True, scanned_by_red=True
        )
    sub = new.subnet_of(red_pos)
    switched = WorldState(
        hosts=hosts,
        red_position=red_pos,
        red_current_subnet=sub,
        red_visited={sub},
        red_kind=s.red_kind,
        step_index=s.step_index,
        done=s.done,
        p_green=s.p_green,
        decoys={},
        rng=s.rng,
    )
    return switched, observe(new, switched)


def run_switch_episode(
    policy,
    scn_a: Scenario,
    scn_b: Scenario,
    red_kind: str,
    seed: int,
    *,
    switch_step: int = 50,
    horizon: int = 100,
    p_green: float = 0.25,
) -> dict:
    """One episode that changes networks mid-flight; per-step records."""
    state, obs = reset(scn_a, red_kind, seed, p_green)
    scn = scn_a
    rewards: list[float] = []
    invalid: list[bool] = []
    for t in range(horizon):
        if t == switch_step:
            state, obs = switch_scenario(scn_a, scn_b, state)
            scn = scn_b
        action = policy.plan(scn, obs)
        state, sr = step(scn, state, action)
        rewards.append(sr.normalized_reward)
        invalid.append(bool(sr.info.get("invalid_action", False)))
        obs = sr.observation
        if sr.terminated or sr.truncated:
            break
    return {"rewards": rewards, "invalid": invalid, "switch_step": switch_step}


# ---------------------------------------------------------------------------
# shared plumbing


def _write_config_json(
    out: Path, name: str, seed: int, conditions: dict[str, TrainConfig], extras: dict | None = None
) -> None:
    payload = {
        "experiment": name,
        "seed": seed,
        "version": __version__,
        "conditions": {
            label: {"config": dataclasses.asdict(cfg), "config_hash": config_hash(cfg)}
            for label, cfg in conditions.items()
        },
    }
    if extras:
        payload.update(extras)
    with open(out / "config.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _tagged(label: str, rows: list[dict]) -> list[dict]:
    return [{"condition": label, **r} for r in rows]


EVAL_ROW_HEADER = [
    "condition", "episode", "scenario", "red", "seed", "steps",
    "raw_return", "norm_return", "invalid",
]


# ---------------------------------------------------------------------------
# experiments


def experiment_topology_sweep(
    out_dir: Path | str,
    *,
    counts: tuple[int, ...] = SWEEP_COUNTS,
    variants: tuple[str, ...] = SWEEP_VARIANTS,
    total_timesteps: int = 50_000,
    episodes: int = 100,
    seed: int = 0,
) -> list[ExperimentReport]:
    """Train every (variant, topology-count) cell; evaluate on its own tasks."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports: list[ExperimentReport] = []
    episode_rows: list[dict] = []
    conditions: dict[str, TrainConfig] = {}
    for variant in variants:
        for count in counts:
            label = f"{variant}@{count}"
            cfg = TrainConfig(
                variant=variant,
                topology_source="psg",
                n_topologies=count,
                total_timesteps=total_timesteps,
                red_kinds=("bline",),
                seed=seed,
                out_dir=str(out / f"{variant}_t{count}"),
            )
            conditions[label] = cfg
            t0 = time.perf_counter()
            ckpt = train(cfg)
            policy, _ = load_policy(ckpt)
            rows = eval_episodes(policy, build_scenarios(cfg), "bline", episodes, seed=seed)
            episode_rows += _tagged(label, rows)
            reports.append(
                report_from_returns(
                    label, [r["norm_return"] for r in rows], time.perf_counter() - t0
                )
            )
    write_report_csv(out / "report.csv", reports)
    write_csv(out / "episodes.csv", EVAL_ROW_HEADER, episode_rows)
    _write_config_json(out, "topology_sweep", seed, conditions)
    return reports


def experiment_randomization(
    out_dir: Path | str,
    *,
    total_timesteps: int = 50_000,
    episodes: int = 20,
    seed: int = 0,
) -> list[ExperimentReport]:
    """Matched-seed evaluation with and without per-episode host relabeling.

    The graph agent's paired episode rewards coincide (the relabeling is
    invisible to it); the flat baseline faces scrambled inputs and degrades.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gacd_cfg = TrainConfig(
        variant="m1",
        topology_source="psg",
        n_topologies=4,
        total_timesteps=total_timesteps,
        red_kinds=("bline",),
        seed=seed,
        out_dir=str(out / "gacd"),
    )
    flat_cfg = TrainConfig(
        variant="flat",
        topology_source="vanilla",
        total_timesteps=total_timesteps,
        red_kinds=("bline",),
        seed=seed,
        out_dir=str(out / "flat"),
    )
    reports: list[ExperimentReport] = []
    episode_rows: list[dict] = []
    for label, cfg in (("gacd", gacd_cfg), ("flat", flat_cfg)):
        t0 = time.perf_counter()
        ckpt = train(cfg)
        policy, _ = load_policy(ckpt)
        scenarios = build_scenarios(cfg)
        for suffix, permuted in (("plain", False), ("permuted", True)):
            rows = eval_episodes(
                policy, scenarios, "bline", episodes, seed=seed, permute_nodes=permuted
            )
            episode_rows += _tagged(f"{label}-{suffix}", rows)
            reports.append(
                report_from_returns(
                    f"{label}-{suffix}",
                    [r["norm_return"] for r in rows],
                    time.perf_counter() - t0,
                )
            )
    write_report_csv(out / "report.csv", reports)
    write_csv(out / "episodes.csv", EVAL_ROW_HEADER, episode_rows)
    _write_config_json(out, "randomization", seed, {"gacd": gacd_cfg, "flat": flat_cfg})
    return reports


SWITCH_EPISODE_HEADER = [
    "condition", "episode", "seed", "steps",
    "pre_mean_step", "post_mean_step", "post_steps", "post_invalid",
]


def experiment_dynamic_switch(
    out_dir: Path | str,
    *,
    total_timesteps: int = 50_000,
    episodes: int = 100,
    switch_step: int = 50,
    seed: int = 0,
    gacd_ckpt: Path | str | None = None,
    flat_ckpt: Path | str | None = None,
) -> list[ExperimentReport]:
    """Swap the network mid-episode; compare per-step reward before and after.

    Conditions: the graph agent through a real switch (to a fresh unseen
    topology), the flat baseline through the same switch (observation
    truncated or zero-padded to its training length), and the graph agent
    through a null switch (same topology again) as the control.  Already
    trained checkpoints can be passed in to skip the training phase.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gacd_cfg = TrainConfig(
        variant="m1",
        topology_source="psg",
        n_topologies=4,
        total_timesteps=total_timesteps,
        red_kinds=("bline",),
        seed=seed,
        out_dir=str(out / "gacd"),
    )
    flat_cfg = TrainConfig(
        variant="flat",
        topology_source="psg",
        n_topologies=1,
        total_timesteps=total_timesteps,
        red_kinds=("bline",),
        seed=seed,
        out_dir=str(out / "flat"),
    )
    if gacd_ckpt is None:
        gacd_ckpt = train(gacd_cfg)
    if flat_ckpt is None:
        flat_ckpt = train(flat_cfg)
    gacd_policy, _ = load_policy(gacd_ckpt)
    flat_policy, flat_meta = load_policy(flat_ckpt)
    flat_policy.adapt = True  # spec'd post-switch behaviour: pad or truncate

    scn_a = build_scenarios(flat_cfg)[0]
    spec = ScenarioSpec(ns_range=flat_cfg.ns_range, nh_range=flat_cfg.nh_range)
    scn_b = generate_scenario(spec, seed=_fold(seed, LANE_SWITCH_TARGET))

    reports: list[ExperimentReport] = []
    episode_rows: list[dict] = []
    curve_rows: list[dict] = []
    runs = (
        ("gacd-switch", gacd_policy, scn_a, scn_b),
        ("flat-switch", flat_policy, scn_a, scn_b),
        ("gacd-null", gacd_policy, scn_a, scn_a),
    )
    for label, policy, a, b in runs:
        t0 = time.perf_counter()
        pre_means: list[float] = []
        post_means: list[float] = []
        for e in range(episodes):
            ep_seed = _fold(seed, LANE_EVAL, e)
            rec = run_switch_episode(
                policy, a, b, "bline", ep_seed, switch_step=switch_step
            )
            rewards = rec["rewards"]
            pre = rewards[:switch_step]
            post = rewards[switch_step:]
            post_invalid = sum(rec["invalid"][switch_step:])
            row = {
                "condition": label,
                "episode": e,
                "seed": ep_seed,
                "steps": len(rewards),
                "pre_mean_step": float(np.mean(pre)) if pre else float("nan"),
                "post_mean_step": float(np.mean(post)) if post else float("nan"),
                "post_steps": len(post),
                "post_invalid": post_invalid,
            }
            episode_rows.append(row)
            curve_rows += [
                {"condition": label, "episode": e, "step": t, "reward": r, "invalid": int(i)}
                for t, (r, i) in enumerate(zip(rewards, rec["invalid"]))
            ]
            if pre:
                pre_means.append(row["pre_mean_step"])
            if post:
                post_means.append(row["post_mean_step"])
        dt = time.perf_counter() - t0
        # an agent can die (invalid action) before the switch; a segment with
        # no surviving episodes simply has no summary row
        if pre_means:
            reports.append(report_from_returns(f"{label}-pre", pre_means, dt))
        if post_means:
            reports.append(report_from_returns(f"{label}-post", post_means, dt))

    write_report_csv(out / "report.csv", reports)
    write_csv(out / "episodes.csv", SWITCH_EPISODE_HEADER, episode_rows)
    write_csv(out / "curve.csv", ["condition", "episode", "step", "reward", "invalid"], curve_rows)
    _write_config_json(
        out,
        "dynamic_switch",
        seed,
        {"gacd": gacd_cfg, "flat": flat_cfg},
        extras={"switch_step": switch_step, "flat_n_hosts": flat_meta["n_hosts"]},
    )
    return reports


def experiment_ot_ablation(
    out_dir: Path | str,
    *,
    total_timesteps: int = 50_000,
    episodes: int = 100,
    seed: int = 0,
    overrides: dict | None = None,
) -> list[ExperimentReport]:
    """m3 with the transport map on vs. replaced by the identity, equal budget.

    ``overrides`` patches extra TrainConfig fields (both conditions equally,
    so the two configs still differ in the single transport flag).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = dict(
        variant="m3",
        topology_source="psg",
        n_topologies=4,
        total_timesteps=total_timesteps,
        red_kinds=("bline",),
        seed=seed,
        **(overrides or {}),
    )
    cfg_on = TrainConfig(**base, ot_enabled=True, out_dir=str(out / "ot_on"))
    cfg_off = TrainConfig(**base, ot_enabled=False, out_dir=str(out / "ot_off"))
    reports: list[ExperimentReport] = []
    episode_rows: list[dict] = []
    for label, cfg in (("ot-on", cfg_on), ("ot-off", cfg_off)):
        t0 = time.perf_counter()
        ckpt = train(cfg)
        policy, _ = load_policy(ckpt)
        rows = eval_episodes(policy, build_scenarios(cfg), "bline", episodes, seed=seed)
        episode_rows += _tagged(label, rows)
        reports.append(
            report_from_returns(
                label, [r["norm_return"] for r in rows], time.perf_counter() - t0
            )
        )
    write_report_csv(out / "report.csv", reports)
    write_csv(out / "episodes.csv", EVAL_ROW_HEADER, episode_rows)
    _write_config_json(out, "ot_ablation", seed, {"ot-on": cfg_on, "ot-off": cfg_off})
    return reports


def experiment_cross_red(
    out_dir: Path | str,
    *,
    total_timesteps: int = 50_000,
    episodes: int = 100,
    seed: int = 0,
) -> list[ExperimentReport]:
    """Train against one attacker, evaluate against both; both directions."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    configs = {
        kind: TrainConfig(
            variant="m1",
            topology_source="psg",
            n_topologies=4,
            total_timesteps=total_timesteps,
            red_kinds=(kind,),
            seed=seed,
            out_dir=str(out / f"trained_{kind}"),
        )
        for kind in ("bline", "meander")
    }
    reports: list[ExperimentReport] = []
    episode_rows: list[dict] = []
    for trained_on, cfg in configs.items():
        t0 = time.perf_counter()
        ckpt = train(cfg)
        policy, _ = load_policy(ckpt)
        scenarios = build_scenarios(cfg)
        for eval_on in ("bline", "meander"):
            label = f"{trained_on}->{eval_on}"
            rows = eval_episodes(policy, scenarios, eval_on, episodes, seed=seed)
            episode_rows += _tagged(label, rows)
            reports.append(
                report_from_returns(
                    label, [r["norm_return"] for r in rows], time.perf_counter() - t0
                )
            )
    write_report_csv(out / "report.csv", reports)
    write_csv(out / "episodes.csv", EVAL_ROW_HEADER, episode_rows)
    _write_config_json(out, "cross_red", seed, configs)
    return reports
