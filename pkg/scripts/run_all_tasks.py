"""Solve every bundled planning task and run every bundled MPC task, printing a summary table.

Usage: python scripts/run_all_tasks.py [--out runs]
"""

import argparse
import time
from pathlib import Path

from cslq import config
from cslq.cli import run_mpc, run_plan


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs", help="output root; one subdirectory per task")
    args = parser.parse_args()
    root = Path(args.out)
    for name in config.bundled_tasks():
        cfg = config.load(name)
        start = time.perf_counter()
        if cfg.mpc is None:
            report = run_plan(cfg, root / name)
            status = f"converged={report.converged} iterations={report.iterations} ise={report.ises[-1] if report.ises else report.initial_ise:.2e}"
        else:
            _, _, ok = run_mpc(cfg, root / name)
            status = f"goal={ok}"
        print(f"{name:24s} {status}  ({time.perf_counter() - start:.1f} s)")


if __name__ == "__main__":
    main()
