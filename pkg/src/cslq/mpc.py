"""Receding-horizon runtime: warm-started replanning, high-rate feedback loop, simulated plant.

The planner (outer loop) re-solves over ``[t_now, t_now + horizon]`` from the
latest state estimate and publishes an immutable controller snapshot. The
feedback loop (inner loop) evaluates ``u = u_ff(t) + K(t) x_est`` from the most
recent snapshot at a fixed rate. By default both run on one deterministic
virtual clock; ``run_episode(..., mode="threaded")`` runs them concurrently on
wall-clock time for throughput measurement.
"""

from __future__ import annotations

import csv
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cost import Cost
from .integrator import IntegrationError, IntegratorSettings, integrate_adaptive
from .models.tracked import TrackedBaseModel, two_wheel_velocity
from .slq import DivergenceError, SolveReport, SolverSettings, solve
from .system import SystemModel
from .trajectory import TimeVaryingController

log = logging.getLogger(__name__)

PLANT_STEP = IntegratorSettings(abs_tol=1e-9, rel_tol=1e-9, max_step=1.0, max_steps=10_000)


@dataclass(frozen=True)
class MpcSettings:
    horizon: float = 15.0
    inner_rate: float = 250.0
    outer_rate: float = 10.0
    estimator_rate: float = 20.0
    warm_start: bool = True
    warm_iterations: int = 3
    cold_tol: float = 1e-6
    warm_tol: float = 1e-4
    goal_tolerance: float = 0.01
    goal_angle_tolerance: float = 0.05
    goal_position_indices: tuple[int, ...] = (0, 1)
    goal_angle_indices: tuple[int, ...] = (2,)
    timeout: float = 30.0
    replan: bool = True

    def __post_init__(self):
        if self.horizon <= 0 or self.timeout <= 0:
            raise ValueError("horizon and timeout must be positive")
        if not (self.inner_rate > self.outer_rate > 0):
            raise ValueError("need inner_rate > outer_rate > 0")
        if self.estimator_rate <= 0:
            raise ValueError("estimator_rate must be positive")
        if self.warm_iterations < 1:
            raise ValueError("warm_iterations must be positive")
        if self.cold_tol <= 0 or self.warm_tol <= 0:
            raise ValueError("integrator tolerances must be positive")
        if self.goal_tolerance <= 0 or self.goal_angle_tolerance <= 0:
            raise ValueError("goal tolerances must be positive")


@dataclass(frozen=True)
class DisturbanceSettings:
    """Plant disturbances.

    ``slip`` scales the plant input channels (track speeds for tracked bases,
    model inputs otherwise); channels beyond its length are unscaled. Estimate
    jumps occur at ``jump_rate`` per second on ``jump_channels`` with normal
    magnitude ``jump_magnitude`` and corrupt one estimator sample each.
    """

    slip: tuple[float, ...] = ()
    jump_magnitude: float = 0.0
    jump_rate: float = 0.0
    jump_channels: tuple[int, ...] = (0, 1)
    seed: int = 0

    def __post_init__(self):
        values = np.asarray(self.slip, dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("slip factors must be finite and non-negative")
        if not (np.isfinite(self.jump_magnitude) and self.jump_magnitude >= 0):
            raise ValueError("jump_magnitude must be finite and non-negative")
        if not (np.isfinite(self.jump_rate) and self.jump_rate >= 0):
            raise ValueError("jump_rate must be finite and non-negative")


class ControllerSlot:
    """Single-writer, single-reader holder of the active controller snapshot.

    Snapshots are immutable, so swapping the reference under a lock is atomic:
    a reader sees either the old or the new controller, never a mixture.
    """

    def __init__(self, controller: Optional[TimeVaryingController] = None):
        self._lock = threading.Lock()
        self._controller = controller
        self._version = 0 if controller is None else 1

    def publish(self, controller: TimeVaryingController) -> None:
        with self._lock:
            self._controller = controller
            self._version += 1

    def snapshot(self) -> tuple[Optional[TimeVaryingController], int]:
        with self._lock:
            return self._controller, self._version


def plant_input(model: SystemModel, x, u) -> np.ndarray:
    """Actuator commands for model input ``u``: track speeds plus arm rates for tracked bases."""
    u = np.asarray(u, dtype=float)
    if isinstance(model, TrackedBaseModel):
        v_r, v_l = model.track_speeds(x, u)
        return np.concatenate([[v_r, v_l], u[3:]])
    return u.copy()


class PlantSimulation:
    """True plant state driven by actuator commands, with slip and a sampled, jumpy estimate."""

    def __init__(self, model: SystemModel, x0, disturbance: DisturbanceSettings = DisturbanceSettings(), estimator_rate: float = 20.0):
        self.model = model
        self.x = np.asarray(x0, dtype=float).copy()
        self.disturbance = disturbance
        self.estimator_period = 1.0 / estimator_rate
        self.rng = np.random.default_rng(disturbance.seed)
        self.estimate = self.x.copy()
        self._next_sample = 0.0
        self._jump_probability = min(disturbance.jump_rate * self.estimator_period, 1.0)

    def _slip(self, p):
        s = np.ones_like(p)
        k = min(len(self.disturbance.slip), p.size)
        s[:k] = self.disturbance.slip[:k]
        return s * p

    def velocity(self, x, p) -> np.ndarray:
        """True state derivative under actuator commands ``p``."""
        p = self._slip(p)
        if isinstance(self.model, TrackedBaseModel):
            base = two_wheel_velocity(x[2], p[0], p[1], self.model.b, self.model.d)
            return np.concatenate([base, p[2:]])
        return self.model.flow(x, p, 0.0)

    def advance(self, p, dt: float) -> None:
        """Hold actuator commands ``p`` for ``dt`` seconds."""
        p = np.asarray(p, dtype=float)
        _, states = integrate_adaptive(lambda t, x: self.velocity(x, p), self.x, 0.0, dt, PLANT_STEP)
        self.x = states[-1]

    def sample(self, t: float) -> np.ndarray:
        """Zero-order-hold estimate at time ``t``, refreshed at the estimator rate."""
        if t + 1e-12 >= self._next_sample:
            est = self.x.copy()
            if self._jump_probability > 0 and self.rng.random() < self._jump_probability:
                idx = list(self.disturbance.jump_channels)
                est[idx] += self.rng.normal(0.0, self.disturbance.jump_magnitude, len(idx))
            self.estimate = est
            while self._next_sample <= t + 1e-12:
                self._next_sample += self.estimator_period
        return self.estimate


def inner_loop_tick(model: SystemModel, controller: TimeVaryingController, estimate, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the feedback law at the estimate; return ``(model input, actuator commands)``."""
    u = controller(np.asarray(estimate, dtype=float), t)
    return u, plant_input(model, estimate, u)


def mpc_step(
    model: SystemModel,
    cost: Cost,
    estimate,
    t_now: float,
    previous: Optional[TimeVaryingController],
    settings: MpcSettings,
    solver: SolverSettings = SolverSettings(),
) -> tuple[Optional[TimeVaryingController], Optional[SolveReport], Optional[str]]:
    """Replan over ``[t_now, t_now + horizon]``.

    A previous controller (warm start) is re-indexed onto the new horizon with
    its tail clamped, and solved with ``warm_iterations`` and ``warm_tol``;
    otherwise a cold solve with ``cold_tol`` runs. On failure the previous
    controller is returned unchanged together with the error message.
    """
    tf = t_now + settings.horizon
    warm = settings.warm_start and previous is not None
    tol = settings.warm_tol if warm else settings.cold_tol
    sset = replace(
        solver,
        forward=solver.forward.with_tolerance(tol),
        backward=solver.backward.with_tolerance(tol),
        max_iterations=settings.warm_iterations if warm else solver.max_iterations,
    )
    init = previous.regrid(t_now, tf) if warm else None
    try:
        report = solve(model, cost, estimate, t_now, tf, init, sset)
    except (DivergenceError, ValueError, ArithmeticError) as exc:
        log.warning("replan at t=%.3f failed: %s", t_now, exc)
        return previous, None, str(exc)
    return report.controller, report, None


@dataclass
class ReplanRecord:
    t: float
    iterations: int
    cost: float
    ise: float
    converged: bool
    warm: bool
    failed: bool
    solve_time: float


@dataclass
class EpisodeLog:
    model_dims: tuple[int, int, int]
    ticks: list[list[float]] = field(default_factory=list)
    replans: list[ReplanRecord] = field(default_factory=list)
    reached_goal: bool = False
    diverged: bool = False
    final_time: float = 0.0
    final_state: Optional[np.ndarray] = None
    tick_jitter: list[float] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([row[0] for row in self.ticks])

    def column(self, group: str) -> np.ndarray:
        n_x, _, n_p = self.model_dims
        body = np.array([row[1:] for row in self.ticks])
        spans = {"true": (0, n_x), "estimate": (n_x, 2 * n_x), "input": (2 * n_x, 2 * n_x + n_p)}
        a, b = spans[group]
        return body[:, a:b]

    def write_csv(self, directory) -> None:
        """Write ``ticks.csv``, ``replans.csv`` and the wall-clock ``replan_timing.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        n_x, _, n_p = self.model_dims
        header = ["t"] + [f"x{i}" for i in range(n_x)] + [f"xhat{i}" for i in range(n_x)] + [f"p{i}" for i in range(n_p)]
        with open(directory / "ticks.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for row in self.ticks:
                w.writerow([repr(float(v)) for v in row])
        with open(directory / "replans.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "iterations", "cost", "ise", "converged", "warm", "failed"])
            for r in self.replans:
                w.writerow([repr(r.t), r.iterations, repr(r.cost), repr(r.ise), int(r.converged), int(r.warm), int(r.failed)])
        with open(directory / "replan_timing.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "solve_time"])
            for r in self.replans:
                w.writerow([repr(r.t), f"{r.solve_time:.6f}"])


def goal_reached(x, x_goal, settings: MpcSettings) -> bool:
    pos = list(settings.goal_position_indices)
    ang = list(settings.goal_angle_indices)
    d_pos = np.linalg.norm(np.asarray(x)[pos] - np.asarray(x_goal)[pos]) if pos else 0.0
    d_ang = np.max(np.abs(_wrap(np.asarray(x)[ang] - np.asarray(x_goal)[ang]))) if ang else 0.0
    return d_pos <= settings.goal_tolerance and d_ang <= settings.goal_angle_tolerance


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _record(log_: EpisodeLog, t, plant: PlantSimulation, p):
    log_.ticks.append([t, *plant.x, *plant.estimate, *p])


def _replan_record(t, report, warm, failed, elapsed) -> ReplanRecord:
    if report is None:
        return ReplanRecord(t, 0, float("nan"), float("nan"), False, warm, True, elapsed)
    cost = report.costs[-1] if report.costs else report.initial_cost
    ise = report.ises[-1] if report.ises else report.initial_ise
    return ReplanRecord(t, report.iterations, cost, ise, report.converged, warm, failed, elapsed)


def run_episode(
    model: SystemModel,
    cost: Cost,
    x0,
    x_goal,
    settings: MpcSettings,
    disturbance: DisturbanceSettings = DisturbanceSettings(),
    solver: SolverSettings = SolverSettings(),
    mode: str = "virtual",
) -> EpisodeLog:
    """Simulate plant, estimator, feedback loop and planner until the goal or the timeout.

    With ``settings.replan`` false only the initial plan is computed and the
    feedback loop runs it (clamped beyond its horizon) for the whole episode.
    """
    if mode == "virtual":
        return _run_virtual(model, cost, x0, x_goal, settings, disturbance, solver)
    if mode == "threaded":
        return _run_threaded(model, cost, x0, x_goal, settings, disturbance, solver)
    raise ValueError(f"unknown mode {mode!r}")


def no_replan_baseline(settings: MpcSettings) -> MpcSettings:
    """Settings that execute the initial plan once over its own horizon, without an outer loop.

    Beyond the horizon the clamped terminal feedback is a fixed high-gain law
    acting on a sampled estimate, which is not a meaningful controller, so the
    baseline episode ends when the plan does.
    """
    return replace(settings, replan=False, timeout=min(settings.timeout, settings.horizon))


def _advance(plant, p, dt, log_, t) -> bool:
    try:
        plant.advance(p, dt)
    except IntegrationError as exc:
        log.warning("plant simulation failed at t=%.3f: %s", t, exc)
        log_.diverged = True
        log_.final_time = t
        return False
    return True


def _initial_plan(model, cost, plant, settings, solver, log_):
    est = plant.sample(0.0)
    start = time.perf_counter()
    ctrl, report, err = mpc_step(model, cost, est, 0.0, None, settings, solver)
    log_.replans.append(_replan_record(0.0, report, False, err is not None, time.perf_counter() - start))
    if ctrl is None:
        raise DivergenceError(f"initial plan failed: {err}", 0)
    return ctrl


def _run_virtual(model, cost, x0, x_goal, settings, disturbance, solver) -> EpisodeLog:
    plant = PlantSimulation(model, x0, disturbance, settings.estimator_rate)
    n_p = plant_input(model, plant.x, np.zeros(model.n_u)).size
    log_ = EpisodeLog((model.n_x, model.n_u, n_p))
    slot = ControllerSlot(_initial_plan(model, cost, plant, settings, solver, log_))
    dt = 1.0 / settings.inner_rate
    ticks_per_replan = max(1, int(round(settings.inner_rate / settings.outer_rate)))
    n_ticks = int(np.ceil(settings.timeout * settings.inner_rate - 1e-9))
    for k in range(n_ticks):
        t = k * dt
        est = plant.sample(t)
        if settings.replan and k > 0 and k % ticks_per_replan == 0:
            previous, _ = slot.snapshot()
            start = time.perf_counter()
            ctrl, report, err = mpc_step(model, cost, est, t, previous, settings, solver)
            log_.replans.append(_replan_record(t, report, settings.warm_start, err is not None, time.perf_counter() - start))
            if err is None:
                slot.publish(ctrl)
        ctrl, _ = slot.snapshot()
        _, p = inner_loop_tick(model, ctrl, est, t)
        _record(log_, t, plant, p)
        if goal_reached(est, x_goal, settings):
            log_.reached_goal = True
            log_.final_time = t
            break
        if not _advance(plant, p, dt, log_, t):
            break
    else:
        log_.final_time = n_ticks * dt
    log_.final_state = plant.x.copy()
    return log_


def _run_threaded(model, cost, x0, x_goal, settings, disturbance, solver) -> EpisodeLog:
    plant = PlantSimulation(model, x0, disturbance, settings.estimator_rate)
    n_p = plant_input(model, plant.x, np.zeros(model.n_u)).size
    log_ = EpisodeLog((model.n_x, model.n_u, n_p))
    slot = ControllerSlot(_initial_plan(model, cost, plant, settings, solver, log_))
    shared = {"estimate": plant.estimate.copy(), "t": 0.0}
    lock = threading.Lock()
    stop = threading.Event()

    def planner():
        period = 1.0 / settings.outer_rate
        while not stop.is_set():
            begin = time.perf_counter()
            with lock:
                est, t = shared["estimate"].copy(), shared["t"]
            previous, _ = slot.snapshot()
            ctrl, report, err = mpc_step(model, cost, est, t, previous, settings, solver)
            elapsed = time.perf_counter() - begin
            with lock:
                log_.replans.append(_replan_record(t, report, settings.warm_start, err is not None, elapsed))
            if err is None:
                slot.publish(ctrl)
            stop.wait(max(0.0, period - elapsed))

    worker = threading.Thread(target=planner, daemon=True)
    if settings.replan:
        worker.start()
    dt = 1.0 / settings.inner_rate
    origin = time.perf_counter()
    k = 0
    try:
        while True:
            t = k * dt
            if t >= settings.timeout:
                log_.final_time = t
                break
            target = origin + t
            now = time.perf_counter()
            if target > now:
                time.sleep(target - now)
            log_.tick_jitter.append(time.perf_counter() - target)
            est = plant.sample(t)
            with lock:
                shared["estimate"], shared["t"] = est.copy(), t
            ctrl, _ = slot.snapshot()
            _, p = inner_loop_tick(model, ctrl, est, t)
            _record(log_, t, plant, p)
            if goal_reached(est, x_goal, settings):
                log_.reached_goal = True
                log_.final_time = t
                break
            if not _advance(plant, p, dt, log_, t):
                break
            k += 1
    finally:
        stop.set()
        if worker.is_alive():
            worker.join()
    log_.final_state = plant.x.copy()
    return log_


def terminal_position_error(log_: EpisodeLog, x_goal, indices: Sequence[int] = (0, 1)) -> float:
    idx = list(indices)
    return float(np.linalg.norm(log_.final_state[idx] - np.asarray(x_goal, dtype=float)[idx]))


def ee_tracking_error(model, log_: EpisodeLog) -> np.ndarray:
    """World-frame distance between the simulated end effector and its reference, per tick."""
    states = log_.column("true")
    return np.array([np.linalg.norm(model.ee_position(x) - model.reference.position(t)) for t, x in zip(log_.times, states)])
