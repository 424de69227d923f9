"""End-to-end runs of the ``gacd`` command line, in process."""

import json

import numpy as np
import pytest

from gacd.cli import main
from gacd.cybersim import reset
from gacd.graphobs import graph_to_json, observation_to_graph
from gacd.harness import TrainConfig, config_to_json
from gacd.scenario import parse_scenario, vanilla_cc2


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out)


def test_psg_writes_a_loadable_scenario(tmp_path, capsys):
    out = tmp_path / "net.json"
    code, doc = run(capsys, "psg", "--seed", "3", "--out", str(out))
    assert code == 0
    scn = parse_scenario(out.read_text())
    assert doc["hosts"] == len(scn.hosts)
    assert doc["subnets"] == len(scn.subnets)
    # same seed, same bytes
    again = tmp_path / "net2.json"
    run(capsys, "psg", "--seed", "3", "--out", str(again))
    assert again.read_text() == out.read_text()


def test_psg_spec_file_controls_the_bounds(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"ns_range": [3, 3], "nh_range": [5, 6]}))
    out = tmp_path / "net.json"
    _, doc = run(capsys, "psg", "--spec", str(spec), "--seed", "0", "--out", str(out))
    assert doc["subnets"] == 3
    assert 5 <= doc["hosts"] <= 6


def test_fgw_self_distance_is_zero(tmp_path, capsys):
    scn = vanilla_cc2()
    _, obs = reset(scn, "bline", 0)
    g = tmp_path / "g.json"
    g.write_text(graph_to_json(observation_to_graph(scn, obs)))
    code, doc = run(capsys, "fgw", "--a", str(g), "--b", str(g))
    assert code == 0
    assert abs(doc["cost"]) <= 1e-8
    coupling = np.asarray(doc["coupling"])
    n = len(scn.subnets) + len(scn.hosts)
    assert coupling.shape == (n, n)
    assert np.isclose(coupling.sum(), 1.0)


def test_sdot_fits_masses_from_a_codes_file(tmp_path, capsys):
    rng = np.random.default_rng(0)
    codes = tmp_path / "codes.json"
    codes.write_text(json.dumps(rng.uniform(size=(12, 2)).tolist()))
    code, doc = run(
        capsys, "sdot", "--codes", str(codes), "--dim", "2", "--samples", "2048"
    )
    assert code == 0
    assert len(doc["potentials"]) == 12
    assert np.isclose(sum(doc["fitted_masses"]), 1.0, atol=1e-6)
    assert np.allclose(doc["target_masses"], 1 / 12)
    assert doc["max_mass_error"] <= 0.05


def test_sdot_rejects_wrong_dimension(tmp_path, capsys):
    codes = tmp_path / "codes.json"
    codes.write_text(json.dumps([[0.1, 0.2], [0.3, 0.4]]))
    with pytest.raises(SystemExit, match="dimension 3"):
        main(["sdot", "--codes", str(codes), "--dim", "3"])


def test_train_then_eval_round_trip(tmp_path, capsys):
    cfg = TrainConfig(
        red_kinds=("bline",),
        total_timesteps=96,
        rollout_steps=48,
        horizon=16,
        out_dir=str(tmp_path / "run"),
    )
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(config_to_json(cfg))
    code, doc = run(capsys, "train", "--config", str(cfg_path))
    assert code == 0
    ckpt = doc["checkpoint"]
    code, report = run(
        capsys, "eval", "--ckpt", ckpt, "--episodes", "3", "--red", "bline"
    )
    assert code == 0
    assert report["condition"] == "gacd-bline"
    assert report["episodes"] == 3
    assert np.isfinite(report["mean_reward"])
    assert (tmp_path / "run" / "eval_episodes.csv").exists()


def test_eval_accepts_an_explicit_scenario_file(tmp_path, capsys):
    cfg = TrainConfig(
        red_kinds=("bline",),
        total_timesteps=64,
        rollout_steps=32,
        horizon=16,
        out_dir=str(tmp_path / "run"),
    )
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(config_to_json(cfg))
    _, doc = run(capsys, "train", "--config", str(cfg_path))
    net = tmp_path / "net.json"
    run(capsys, "psg", "--seed", "1", "--out", str(net))
    code, report = run(
        capsys,
        "eval",
        "--ckpt",
        doc["checkpoint"],
        "--episodes",
        "2",
        "--red",
        "meander",
        "--scenario",
        str(net),
    )
    assert code == 0
    assert report["episodes"] == 2


def test_exp_subcommand_runs_a_micro_experiment(tmp_path, capsys):
    code, doc = run(
        capsys,
        "exp",
        "cross-red",
        "--out",
        str(tmp_path / "xred"),
        "--steps",
        "64",
        "--episodes",
        "2",
        "--seed",
        "0",
    )
    assert code == 0
    assert [r["condition"] for r in doc["report"]] == [
        "bline->bline",
        "bline->meander",
        "meander->bline",
        "meander->meander",
    ]
    assert (tmp_path / "xred" / "report.csv").exists()


def test_unknown_subcommand_exits_with_usage(capsys):
    with pytest.raises(SystemExit):
        main(["frobnicate"])
    assert "usage" in capsys.readouterr().err.lower()
