"""Compare a receding-horizon episode against executing the initial plan once, for one MPC task.

Usage: python scripts/mpc_compare.py [task] [--seed N] [--out dir]
"""

import argparse
from pathlib import Path

from cslq import config
from cslq.cli import run_mpc
from cslq.mpc import terminal_position_error


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("task", nargs="?", default="mpc-slip")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="runs/compare")
    args = parser.parse_args()
    cfg = config.load(args.task)
    idx = cfg.mpc.goal_position_indices
    for label, replan in (("replanning", True), ("single plan", False)):
        episode, _, _ = run_mpc(cfg, Path(args.out) / label.replace(" ", "-"), args.seed, replan)
        err = terminal_position_error(episode, cfg.problem.x_r, idx)
        print(f"{label:12s} terminal error {1000 * err:8.2f} mm  final time {episode.final_time:6.2f} s  replans {len(episode.replans)}")


if __name__ == "__main__":
    main()
