"""Command-line entry point: ``plan``, ``mpc`` and ``scaling``.

Exit codes: 0 success, 1 usage or configuration error, 2 solver or episode
did not reach its goal. Log verbosity comes from ``CSLQ_LOG_LEVEL``
(default ``WARNING``).
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .mpc import ee_tracking_error, no_replan_baseline, run_episode, terminal_position_error
from .slq import DivergenceError, solve

EXIT_OK, EXIT_USAGE, EXIT_UNCONVERGED = 0, 1, 2

log = logging.getLogger("cslq")


def _setup_logging():
    level = os.environ.get("CSLQ_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def run_plan(cfg, out):
    model, cost = cfg.build_model(), cfg.build_cost()
    report = solve(model, cost, np.array(cfg.problem.x0), 0.0, cfg.problem.horizon, None, cfg.solver_settings())
    report.write(out)
    return report


def cmd_plan(args) -> int:
    cfg = cfgmod.load(args.config)
    try:
        report = run_plan(cfg, args.out)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNCONVERGED
    print(report.summary())
    return EXIT_OK if report.converged else EXIT_UNCONVERGED


def run_mpc(cfg, out, seed=None, replan=True):
    model, cost = cfg.build_model(), cfg.build_cost()
    settings = cfg.mpc_settings()
    if not replan:
        settings = no_replan_baseline(settings)
    episode = run_episode(
        model, cost, np.array(cfg.problem.x0), np.array(cfg.problem.x_r), settings,
        cfg.disturbance_settings(seed), cfg.solver_settings(),
    )
    episode.write_csv(out)
    goal_idx = settings.goal_position_indices
    lines = [
        f"reached goal: {episode.reached_goal}",
        f"diverged: {episode.diverged}",
        f"final time [s]: {episode.final_time:.4f}",
        f"terminal position error [m]: {terminal_position_error(episode, cfg.problem.x_r, goal_idx):.6f}",
        f"replans: {len(episode.replans)}",
        f"failed replans: {sum(r.failed for r in episode.replans)}",
    ]
    ee_ok = True
    if getattr(model, "ee_mode", "none") != "none":
        worst = float(np.max(ee_tracking_error(model, episode)))
        ee_ok = worst <= cfg.mpc.ee_bound
        lines.append(f"max end-effector deviation [m]: {worst:.6f} (bound {cfg.mpc.ee_bound:g})")
    summary = "\n".join(lines)
    (Path(out) / "summary.txt").write_text(summary + "\n")
    return episode, summary, episode.reached_goal and ee_ok


def cmd_mpc(args) -> int:
    cfg = cfgmod.load(args.config)
    if cfg.mpc is None:
        raise ConfigError(f"[mpc]: task {cfg.name!r} has no [mpc] section")
    try:
        _, summary, ok = run_mpc(cfg, args.out, args.seed, not args.no_replan)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNCONVERGED
    print(summary)
    return EXIT_OK if ok else EXIT_UNCONVERGED


def per_iteration_times(cfg, horizons, repeats=3) -> dict:
    """Per-iteration solve time and iteration count for each horizon.

    Horizons are solved round-robin so slow drifts in machine load hit all of
    them alike; each solve contributes its mean time per SLQ iteration and the
    minimum over ``repeats`` is reported, as is usual for timing benchmarks.
    """
    tasks = {h: cfgmod.with_horizon(cfg, h) for h in horizons}
    best = {h: float("inf") for h in horizons}
    iterations = {}
    for _ in range(repeats):
        for h, task in tasks.items():
            report = solve(task.build_model(), task.build_cost(), np.array(task.problem.x0), 0.0, h, None, task.solver_settings())
            if report.iterations:
                best[h] = min(best[h], sum(report.iteration_times) / report.iterations)
            iterations[h] = report.iterations
    return {h: (best[h], iterations[h]) for h in horizons}


def cmd_scaling(args) -> int:
    try:
        horizons = [float(h) for h in args.horizons.split(",") if h.strip()]
    except ValueError:
        print(f"error: --horizons must be a comma-separated list of numbers, got {args.horizons!r}", file=sys.stderr)
        return EXIT_USAGE
    if len(horizons) < 2 or any(h <= 0 for h in horizons):
        print("error: --horizons needs at least two positive values", file=sys.stderr)
        return EXIT_USAGE
    cfg = cfgmod.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for h, (t_it, its) in per_iteration_times(cfg, horizons, args.repeats).items():
        rows.append((h, its, t_it))
        print(f"horizon {h:g} s: {its} iterations, {t_it:.4f} s per iteration")
    with open(out / "scaling.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon", "iterations", "time_per_iteration"])
        for h, its, t_it in rows:
            writer.writerow([repr(h), its, f"{t_it:.6f}"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cslq", description="Constrained SLQ planning and receding-horizon control")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="solve a task once and write trajectory and convergence data")
    p.add_argument("config", help="task file or bundled task name")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("mpc", help="simulate a receding-horizon episode")
    p.add_argument("config", help="task file or bundled task name")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="disturbance seed (overrides the task file)")
    p.add_argument("--no-replan", action="store_true", help="execute the initial plan over its horizon, without the outer loop")
    p.set_defaults(func=cmd_mpc)

    p = sub.add_parser("scaling", help="per-iteration solve time for several horizons")
    p.add_argument("config", help="task file or bundled task name")
    p.add_argument("--horizons", default="5,10,20", help="comma-separated horizons in seconds")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--repeats", type=int, default=3, help="solves per horizon (the fastest is reported)")
    p.set_defaults(func=cmd_scaling)

    sub.add_parser("tasks", help="list bundled tasks").set_defaults(func=cmd_tasks)
    return parser


def cmd_tasks(args) -> int:
    for name in cfgmod.bundled_tasks():
        print(name)
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
