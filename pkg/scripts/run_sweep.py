"""Topology sweep: every variant x topology-count cell, evaluated on its own tasks."""

import argparse

from gacd.harness import experiment_topology_sweep

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--out", default="runs/sweep")
parser.add_argument("--steps", type=int, default=50_000)
parser.add_argument("--episodes", type=int, default=100)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--counts", type=int, nargs="+", default=[4, 8, 16])
parser.add_argument("--variants", nargs="+", default=["m1", "m2", "m3"])
args = parser.parse_args()

reports = experiment_topology_sweep(
    args.out,
    counts=tuple(args.counts),
    variants=tuple(args.variants),
    total_timesteps=args.steps,
    episodes=args.episodes,
    seed=args.seed,
)
for r in reports:
    print(f"{r.condition:10s} {r.mean_reward:9.2f} +- {r.std_reward:7.2f}  ({r.runtime_s:.0f}s)")
