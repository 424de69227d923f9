"""Mid-episode topology switch: graph agent vs flat baseline, plus a null-switch control.

Pass --gacd-ckpt / --flat-ckpt to reuse trained policies instead of training here.
"""

import argparse

from gacd.harness import experiment_dynamic_switch

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--out", default="runs/switch")
parser.add_argument("--steps", type=int, default=50_000)
parser.add_argument("--episodes", type=int, default=100)
parser.add_argument("--switch-step", type=int, default=50)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--gacd-ckpt")
parser.add_argument("--flat-ckpt")
args = parser.parse_args()

reports = experiment_dynamic_switch(
    args.out,
    total_timesteps=args.steps,
    episodes=args.episodes,
    switch_step=args.switch_step,
    seed=args.seed,
    gacd_ckpt=args.gacd_ckpt,
    flat_ckpt=args.flat_ckpt,
)
print("per-step reward, pre/post switch:")
for r in reports:
    print(f"{r.condition:18s} {r.mean_reward:9.3f} +- {r.std_reward:.3f}  ({r.episodes} episodes)")
