"""Node-relabeling robustness: matched-seed eval with and without per-episode shuffles.

The graph agent's two columns come out identical; the flat baseline's collapse
under shuffled host order is the point of the comparison.
"""

import argparse

from gacd.harness import experiment_randomization

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--out", default="runs/randomization")
parser.add_argument("--steps", type=int, default=50_000)
parser.add_argument("--episodes", type=int, default=20)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

for r in experiment_randomization(
    args.out, total_timesteps=args.steps, episodes=args.episodes, seed=args.seed
):
    print(f"{r.condition:15s} {r.mean_reward:10.2f} +- {r.std_reward:7.2f}")
