"""Train the m1 agent on the reference network and compare against random blue.

This is the quick confidence check: ~4 minutes of training should land the
greedy policy around -25 per episode while uniform-random blue sits near
-1700 (it keeps tripping the invalid-action penalty).
"""

import argparse
import time

import numpy as np

from gacd.harness import (
    RandomBlue,
    TrainConfig,
    build_scenarios,
    eval_episodes,
    load_policy,
    train,
)

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--steps", type=int, default=50_000)
parser.add_argument("--episodes", type=int, default=100)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default="runs/baseline")
args = parser.parse_args()

cfg = TrainConfig(
    variant="m1",
    topology_source="vanilla",
    red_kinds=("bline",),
    total_timesteps=args.steps,
    seed=args.seed,
    out_dir=args.out,
)
t0 = time.perf_counter()
ckpt = train(cfg)
print(f"trained: {ckpt}  ({time.perf_counter() - t0:.0f}s)")

policy, _ = load_policy(ckpt)
scenarios = build_scenarios(cfg)
ours = [
    r["norm_return"]
    for r in eval_episodes(policy, scenarios, "bline", args.episodes, seed=args.seed)
]
rand = [
    r["norm_return"]
    for r in eval_episodes(RandomBlue(), scenarios, "bline", args.episodes, seed=args.seed)
]
print(f"trained  {np.mean(ours):9.2f} +- {np.std(ours, ddof=1):.2f}")
print(f"random   {np.mean(rand):9.2f} +- {np.std(rand, ddof=1):.2f}")
