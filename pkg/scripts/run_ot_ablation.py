"""m3 with the transport map on vs. off, equal budgets, 4 generated topologies."""

import argparse

from gacd.harness import experiment_ot_ablation

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--out", default="runs/ot_ablation")
parser.add_argument("--steps", type=int, default=50_000)
parser.add_argument("--episodes", type=int, default=100)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

for r in experiment_ot_ablation(
    args.out, total_timesteps=args.steps, episodes=args.episodes, seed=args.seed
):
    print(f"{r.condition:8s} {r.mean_reward:9.2f} +- {r.std_reward:7.2f}")
