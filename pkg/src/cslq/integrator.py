"""Adaptive Dormand-Prince 5(4) integration and closed-loop rollouts."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .trajectory import TimeGrid, TimeVaryingController, Trajectory

# Dormand-Prince tableau (5th-order propagation, embedded 4th-order error estimate).
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = (
    np.zeros(0),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass(frozen=True)
class IntegratorSettings:
    abs_tol: float = 1e-6
    rel_tol: float = 1e-6
    max_step: float = 0.05
    min_step: float = 1e-10
    max_steps: int = 200_000

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("integrator tolerances must be positive")
        if not (0 < self.min_step <= self.max_step):
            raise ValueError("need 0 < min_step <= max_step")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def with_tolerance(self, tol: float) -> "IntegratorSettings":
        return replace(self, abs_tol=tol, rel_tol=tol)


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.6g})")
        self.t = t


class StepUnderflowError(IntegrationError):
    pass


class MaxStepsExceededError(IntegrationError):
    pass


def _error_norm(err, y_old, y_new, settings):
    scale = settings.abs_tol + settings.rel_tol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.max(np.abs(err) / scale)) if err.size else 0.0


def integrate_adaptive(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t0: float,
    tf: float,
    settings: IntegratorSettings = IntegratorSettings(),
    stops: Optional[Sequence[float]] = None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> tuple[TimeGrid, np.ndarray]:
    """Integrate ``dy/dt = rhs(t, y)`` from ``t0`` to ``tf`` (``tf < t0`` integrates backward).

    Steps are accepted when the scaled max-norm of the embedded error estimate
    is at most one. ``stops`` are times the integrator lands on exactly;
    ``project`` is applied to every accepted state (e.g. symmetrization).

    Returns the grid of accepted nodes in ascending time order and the states
    at those nodes.
    """
    if t0 == tf:
        raise ValueError("t0 and tf must differ")
    direction = 1.0 if tf > t0 else -1.0
    span = abs(tf - t0)
    y = np.array(y0, dtype=float).ravel()

    targets = [tf]
    if stops is not None:
        s = np.asarray(stops, dtype=float)
        s = s[(direction * (s - t0) > 0) & (direction * (tf - s) > 0)]
        targets = sorted(set(s.tolist()), key=lambda v: direction * v) + [tf]
    target_idx = 0

    ts = [t0]
    ys = [y.copy()]
    t = t0
    k1 = np.asarray(rhs(t, y), dtype=float)
    if not np.all(np.isfinite(k1)):
        raise StepUnderflowError("non-finite right-hand side at the initial point", t)

    d0 = np.max(np.abs(y) / (settings.abs_tol + settings.rel_tol * np.abs(y))) if y.size else 0.0
    d1 = np.max(np.abs(k1) / (settings.abs_tol + settings.rel_tol * np.abs(y))) if y.size else 0.0
    h = 0.01 * d0 / d1 if (d0 > 1e-5 and d1 > 1e-5) else 1e-4 * span
    h = float(np.clip(h, settings.min_step, settings.max_step))

    stages = np.empty((7, y.size))
    n_steps = 0
    while True:
        target = targets[target_idx]
        remaining = direction * (target - t)
        landing = False
        if h >= remaining * (1.0 - 1e-12) or remaining - h < 0.01 * h:
            h_try = remaining
            landing = True
        else:
            h_try = h

        stages[0] = k1
        dh = direction * h_try
        for i in range(1, 6):
            stages[i] = rhs(t + dh * _C[i], y + dh * (_A[i] @ stages[:i]))
        y_new = y + dh * (_B @ stages[:6])
        t_new = target if landing else t + dh
        k7 = np.asarray(rhs(t_new, y_new), dtype=float)
        stages[6] = k7
        err = dh * (_E @ stages)
        if np.all(np.isfinite(y_new)) and np.all(np.isfinite(k7)):
            err_norm = _error_norm(err, y, y_new, settings)
        else:
            err_norm = np.inf

        n_steps += 1
        if n_steps > settings.max_steps:
            raise MaxStepsExceededError(f"exceeded {settings.max_steps} integration steps", t)

        if err_norm <= 1.0:
            t = t_new
            if project is not None:
                y_new = project(y_new)
                k7 = np.asarray(rhs(t, y_new), dtype=float)
            y = y_new
            k1 = k7
            ts.append(t)
            ys.append(y.copy())
            if landing:
                target_idx += 1
                if target_idx == len(targets):
                    break
            factor = 5.0 if err_norm == 0.0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            # a short landing step says nothing about the achievable step size
            h = min(settings.max_step, max(h, h_try * factor) if landing else h_try * factor)
        else:
            factor = 0.2 if not np.isfinite(err_norm) else max(0.2, 0.9 * err_norm ** -0.2)
            h = h_try * factor
            if h < settings.min_step:
                raise StepUnderflowError(f"step size fell below min_step={settings.min_step:g}", t)

    ts_arr = np.array(ts)
    ys_arr = np.array(ys)
    if direction < 0:
        ts_arr = ts_arr[::-1]
        ys_arr = ys_arr[::-1]
    return TimeGrid(ts_arr), ys_arr


def rollout(
    model,
    ctrl: TimeVaryingController,
    x0,
    t0: float,
    tf: float,
    settings: IntegratorSettings = IntegratorSettings(),
    quadrature: Optional[Callable[[np.ndarray, np.ndarray, float], np.ndarray]] = None,
):
    """Forward-integrate ``dx/dt = f(x, ctrl(x, t), t)`` and record the applied inputs.

    With ``quadrature(x, u, t) -> vector`` the integrals of that vector along
    the rollout are accumulated under the same error control, and
    ``(trajectory, integrals)`` is returned instead of the trajectory alone.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n_x,):
        raise ValueError(f"x0 has shape {x0.shape}, model expects ({model.n_x},)")
    if ctrl.n_u != model.n_u or ctrl.n_x != model.n_x:
        raise ValueError(
            f"controller maps {ctrl.n_x} states to {ctrl.n_u} inputs; model has n_x={model.n_x}, n_u={model.n_u}"
        )
    flow = model.flow
    n = model.n_x

    if quadrature is None:

        def rhs(t, x):
            return flow(x, ctrl(x, t), t)

        y0 = x0
    else:
        n_q = np.atleast_1d(quadrature(x0, ctrl(x0, t0), t0)).size

        def rhs(t, y):
            x = y[:n]
            u = ctrl(x, t)
            return np.concatenate([flow(x, u, t), np.atleast_1d(quadrature(x, u, t))])

        y0 = np.concatenate([x0, np.zeros(n_q)])

    grid, ys = integrate_adaptive(rhs, y0, t0, tf, settings)
    states = ys[:, :n]
    inputs = np.array([ctrl(x, t) for t, x in zip(grid.nodes, states)])
    traj = Trajectory(grid, states, inputs)
    if quadrature is None:
        return traj
    return traj, ys[-1, n:].copy()
