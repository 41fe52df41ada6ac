"""Time-grid containers for nominal trajectories and affine time-varying controllers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class TimeGrid:
    """Strictly increasing list of time nodes (non-uniform spacing allowed)."""

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        nodes = _frozen(np.ravel(nodes))
        if nodes.size < 2:
            raise ValueError(f"time grid needs at least 2 nodes, got {nodes.size}")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("time grid contains non-finite nodes")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("time grid must be strictly increasing")
        self.nodes = nodes

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def tf(self) -> float:
        return float(self.nodes[-1])

    def __len__(self) -> int:
        return self.nodes.size

    def __repr__(self) -> str:
        return f"TimeGrid(n={len(self)}, t0={self.t0:g}, tf={self.tf:g})"

    def locate(self, t: float) -> tuple[int, float]:
        """Bracketing index ``k`` and weight ``w`` with value = (1-w)*v[k] + w*v[k+1].

        Times outside the grid clamp to the nearest endpoint.
        """
        nodes = self.nodes
        if t <= nodes[0]:
            return 0, 0.0
        if t >= nodes[-1]:
            return nodes.size - 2, 1.0
        k = int(np.searchsorted(nodes, t, side="right")) - 1
        w = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
        return k, float(w)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Rollout of states and applied inputs on a time grid.

    ``inputs`` holds one row per node, or one fewer when the final input is
    undefined; :meth:`padded_inputs` repeats the last row in that case.
    """

    grid: TimeGrid
    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        if not isinstance(self.grid, TimeGrid):
            object.__setattr__(self, "grid", TimeGrid(self.grid))
        states = _frozen(np.atleast_2d(self.states))
        inputs = _frozen(self.inputs)
        if inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {inputs.shape}")
        n = len(self.grid)
        if states.shape[0] != n:
            raise ValueError(f"expected {n} state rows, got {states.shape[0]}")
        if inputs.shape[0] not in (n, n - 1):
            raise ValueError(f"expected {n} or {n - 1} input rows, got {inputs.shape[0]}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def n_x(self) -> int:
        return self.states.shape[1]

    @property
    def n_u(self) -> int:
        return self.inputs.shape[1]

    def padded_inputs(self) -> np.ndarray:
        if self.inputs.shape[0] == len(self.grid):
            return self.inputs
        return np.vstack([self.inputs, self.inputs[-1:]])

    def state_at(self, t: float) -> np.ndarray:
        k, w = self.grid.locate(t)
        return (1.0 - w) * self.states[k] + w * self.states[k + 1]

    def input_at(self, t: float) -> np.ndarray:
        u = self.padded_inputs()
        k, w = self.grid.locate(t)
        return (1.0 - w) * u[k] + w * u[k + 1]

    def to_csv(self, path) -> None:
        """Write ``t, x0..x{n-1}, u0..u{m-1}``, one row per node."""
        u = self.padded_inputs()
        header = ["t"] + [f"x{i}" for i in range(self.n_x)] + [f"u{i}" for i in range(self.n_u)]
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, x, ui in zip(self.times, self.states, u):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in ui])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        n_x = sum(1 for h in header if h.startswith("x"))
        return cls(TimeGrid(body[:, 0]), body[:, 1 : 1 + n_x], body[:, 1 + n_x :])


@dataclass(frozen=True, eq=False)
class TimeVaryingController:
    """Affine feedback law ``u(x, t) = u_ff(t) + K(t) x`` with linear interpolation in time.

    Evaluation before ``t0`` or after ``tf`` clamps to the endpoint values.
    """

    grid: TimeGrid
    u_ff: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        if not isinstance(self.grid, TimeGrid):
            object.__setattr__(self, "grid", TimeGrid(self.grid))
        u_ff = _frozen(self.u_ff)
        K = _frozen(self.K)
        n = len(self.grid)
        if u_ff.ndim != 2 or u_ff.shape[0] != n:
            raise ValueError(f"u_ff must have shape ({n}, n_u), got {u_ff.shape}")
        if K.ndim != 3 or K.shape[0] != n or K.shape[1] != u_ff.shape[1]:
            raise ValueError(f"K must have shape ({n}, {u_ff.shape[1]}, n_x), got {K.shape}")
        object.__setattr__(self, "u_ff", u_ff)
        object.__setattr__(self, "K", K)

    @classmethod
    def zeros(cls, t0: float, tf: float, n_u: int, n_x: int) -> "TimeVaryingController":
        """Constant zero input, the default stabilizing law for kinematic systems."""
        return cls(TimeGrid([t0, tf]), np.zeros((2, n_u)), np.zeros((2, n_u, n_x)))

    @property
    def n_u(self) -> int:
        return self.u_ff.shape[1]

    @property
    def n_x(self) -> int:
        return self.K.shape[2]

    def interpolate(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        k, w = self.grid.locate(t)
        if w == 0.0:
            return self.u_ff[k], self.K[k]
        if w == 1.0:
            return self.u_ff[k + 1], self.K[k + 1]
        return ((1.0 - w) * self.u_ff[k] + w * self.u_ff[k + 1], (1.0 - w) * self.K[k] + w * self.K[k + 1])

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        k, w = self.grid.locate(t)
        u0 = self.u_ff[k] + self.K[k] @ x
        if w == 0.0:
            return u0
        u1 = self.u_ff[k + 1] + self.K[k + 1] @ x
        return (1.0 - w) * u0 + w * u1

    def regrid(self, t0: float, tf: float) -> "TimeVaryingController":
        """Re-index onto ``[t0, tf]``, keeping interior nodes and clamping the uncovered ends."""
        nodes = self.grid.nodes
        inner = nodes[(nodes > t0) & (nodes < tf)]
        times = np.concatenate([[t0], inner, [tf]])
        parts = [self.interpolate(t) for t in times]
        return TimeVaryingController(TimeGrid(times), np.array([p[0] for p in parts]), np.array([p[1] for p in parts]))


def interpolate_controller(ctrl: TimeVaryingController, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Element-wise linear interpolation of ``(u_ff, K)``; clamped beyond the grid."""
    return ctrl.interpolate(t)


def evaluate_control(ctrl: TimeVaryingController, x, t: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (ctrl.n_x,):
        raise ValueError(f"state dimension mismatch: expected ({ctrl.n_x},), got {x.shape}")
    return ctrl(x, t)


def trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    dt = np.diff(times)
    return float(np.sum(0.5 * dt * (values[1:] + values[:-1])))


def constraint_violation(traj: Trajectory, model) -> np.ndarray:
    """Per-node ``||g1||^2 + ||g2||^2`` along a trajectory."""
    u = traj.padded_inputs()
    out = np.zeros(len(traj.grid))
    if model.m1 == 0 and model.m2 == 0:
        return out
    for k, (t, x) in enumerate(zip(traj.times, traj.states)):
        v = 0.0
        if model.m1:
            g = model.g1(x, u[k], t)
            v += float(g @ g)
        if model.m2:
            g = model.g2(x, t)
            v += float(g @ g)
        out[k] = v
    return out


def constraint_ise(traj: Trajectory, model) -> float:
    """Integrated square constraint error (trapezoid rule on the trajectory grid)."""
    if model.m1 == 0 and model.m2 == 0:
        return 0.0
    return trapezoid(constraint_violation(traj, model), traj.times)
