"""Command-line front door.

Subcommands mirror the package layout: ``psg`` generates a scenario file,
``fgw`` compares two attributed graphs, ``sdot`` fits a transport map over a
set of codes, ``train``/``eval`` run the learning loop, and ``exp`` runs one
of the canned experiments.  Machine-readable output goes to stdout as JSON;
progress notes go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gacd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("psg", help="generate a scenario from sampling bounds")
    p.add_argument("--spec", help="JSON file with ScenarioSpec fields (optional)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output scenario JSON path")

    p = sub.add_parser("fgw", help="fused distance between two graph files")
    p.add_argument("--a", required=True, help="first attributed-graph JSON")
    p.add_argument("--b", required=True, help="second attributed-graph JSON")
    p.add_argument("--alpha", type=float, default=0.5, help="structure/feature trade-off")

    p = sub.add_parser("sdot", help="fit a semi-discrete transport map to codes")
    p.add_argument("--codes", required=True, help="JSON file: list of code rows")
    p.add_argument("--dim", type=int, required=True, help="expected code dimension")
    p.add_argument("--samples", type=int, default=4096, help="Monte Carlo samples per step")

    p = sub.add_parser("train", help="run a training config to completion")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")

    p = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--red", choices=("bline", "meander"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--scenario",
        default=None,
        help="override: a scenario JSON path (default: the checkpoint's training tasks)",
    )

    p = sub.add_parser("exp", help="run one canned experiment")
    p.add_argument(
        "kind", choices=("sweep", "randomization", "switch", "ot-ablation", "cross-red")
    )
    p.add_argument("--out", required=True, help="experiment output directory")
    p.add_argument("--steps", type=int, default=50_000, help="training budget per condition")
    p.add_argument("--episodes", type=int, default=100, help="evaluation episodes per condition")
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


def _cmd_psg(args) -> int:
    from .scenario import ScenarioSpec, generate_scenario, serialize_scenario

    if args.spec:
        with open(args.spec) as fh:
            doc = json.load(fh)
        for key in ("ns_range", "nh_range", "subnet_type_options"):
            if key in doc:
                doc[key] = tuple(doc[key])
        spec = ScenarioSpec(**doc)
    else:
        spec = ScenarioSpec()
    scenario = generate_scenario(spec, seed=args.seed)
    Path(args.out).write_text(serialize_scenario(scenario))
    print(json.dumps({"out": args.out, "hosts": len(scenario.hosts), "subnets": len(scenario.subnets)}))
    return 0


def _cmd_fgw(args) -> int:
    from .fgw import MeasuredGraph, fgw_distance
    from .graphobs import graph_from_json

    a = MeasuredGraph.from_attributed(graph_from_json(Path(args.a).read_text()))
    b = MeasuredGraph.from_attributed(graph_from_json(Path(args.b).read_text()))
    result = fgw_distance(a, b, alpha=args.alpha)
    print(json.dumps({"cost": result.cost, "coupling": result.coupling.tolist()}))
    return 0


def _cmd_sdot(args) -> int:
    from .otmap import CostKind, LatentCodes, fit_sdot

    rows = np.asarray(json.loads(Path(args.codes).read_text()), dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != args.dim:
        raise SystemExit(f"codes must be rows of dimension {args.dim}")
    m = fit_sdot(
        LatentCodes.from_rows(rows),
        CostKind.SQUARED_EUCLIDEAN,
        mc_samples=args.samples,
    )
    err = float(np.max(np.abs(m.fitted_masses - m.codes.nu)))
    print(
        json.dumps(
            {
                "potentials": m.potentials.tolist(),
                "fitted_masses": m.fitted_masses.tolist(),
                "target_masses": m.codes.nu.tolist(),
                "max_mass_error": err,
            }
        )
    )
    return 0


def _cmd_train(args) -> int:
    from .harness import config_from_json, train

    config = config_from_json(Path(args.config).read_text())
    ckpt = train(config)
    print(json.dumps({"checkpoint": str(ckpt)}))
    return 0


def _cmd_eval(args) -> int:
    import dataclasses

    from .harness import TrainConfig, build_scenarios, evaluate
    from .scenario import parse_scenario

    if args.scenario:
        scenarios = [parse_scenario(Path(args.scenario).read_text())]
    else:
        with open(str(args.ckpt) + ".meta.json") as fh:
            meta = json.load(fh)
        doc = meta["train_config"]
        for key in ("ns_range", "nh_range", "red_kinds"):
            doc[key] = tuple(doc[key])
        scenarios = build_scenarios(TrainConfig(**doc))
    report = evaluate(args.ckpt, scenarios, args.red, args.episodes, seed=args.seed)
    print(json.dumps(dataclasses.asdict(report)))
    return 0


def _cmd_exp(args) -> int:
    import dataclasses

    from .harness import (
        experiment_cross_red,
        experiment_dynamic_switch,
        experiment_ot_ablation,
        experiment_randomization,
        experiment_topology_sweep,
    )

    runner = {
        "sweep": experiment_topology_sweep,
        "randomization": experiment_randomization,
        "switch": experiment_dynamic_switch,
        "ot-ablation": experiment_ot_ablation,
        "cross-red": experiment_cross_red,
    }[args.kind]
    reports = runner(
        args.out, total_timesteps=args.steps, episodes=args.episodes, seed=args.seed
    )
    print(json.dumps({"out": args.out, "report": [dataclasses.asdict(r) for r in reports]}))
    return 0


_COMMANDS = {
    "psg": _cmd_psg,
    "fgw": _cmd_fgw,
    "sdot": _cmd_sdot,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "exp": _cmd_exp,
}


if __name__ == "__main__":
    sys.exit(main())
