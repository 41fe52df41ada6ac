"""Planar tracked base (two-wheel reduction) and tracked mobile manipulator.

State ``[x_c, y_c, theta, phi_1..phi_k]``, input = its time derivative.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..system import SystemModel
from .references import EeReference, FixedPoint


def _perp(v):
    return np.array([-v[1], v[0]])


def tracked_constraint(x, u, d: float = 0.0) -> np.ndarray:
    """Nonholonomic residual ``ydot cos(theta) - xdot sin(theta) - thetadot d``."""
    th = x[2]
    return np.array([u[1] * np.cos(th) - u[0] * np.sin(th) - u[2] * d])


def track_speeds(x, u, b: float) -> tuple[float, float]:
    """Right/left track speeds for base velocities ``u[:3]`` and half track separation ``b``."""
    th = x[2]
    v = u[0] * np.cos(th) + u[1] * np.sin(th)
    return float(v + b * u[2]), float(v - b * u[2])


def two_wheel_velocity(theta: float, v_r: float, v_l: float, b: float, d: float = 0.0) -> np.ndarray:
    """Base velocities ``(xdot, ydot, thetadot)`` produced by track speeds.

    The base frame sits ``d`` behind the centre of rotation along the lateral
    axis, so it moves sideways at ``d * thetadot``.
    """
    v = 0.5 * (v_r + v_l)
    w = (v_r - v_l) / (2.0 * b)
    c, s = np.cos(theta), np.sin(theta)
    return np.array([v * c - d * w * s, v * s + d * w * c, w])


class TrackedBaseModel(SystemModel):
    """Kinematic tracked base with ``n_arm`` extra revolute joints and one nonholonomic row."""

    def __init__(self, d: float = 0.0, b: float = 0.5, n_arm: int = 0, nonholonomic: bool = True, m1_extra: int = 0, m2: int = 0):
        if b <= 0:
            raise ValueError("half track separation b must be positive")
        self.d = float(d)
        self.b = float(b)
        self.n_arm = int(n_arm)
        self.nonholonomic = bool(nonholonomic)
        n = 3 + self.n_arm
        super().__init__(n, n, (1 if nonholonomic else 0) + m1_extra, m2)

    def flow(self, x, u, t):
        return np.array(u, dtype=float)

    def flow_jacobians(self, x, u, t):
        return np.zeros((self.n_x, self.n_x)), np.eye(self.n_x)

    def _nh_rows(self, x, u):
        if not self.nonholonomic:
            return np.zeros(0), np.zeros((0, self.n_x)), np.zeros((0, self.n_u))
        th = x[2]
        c, s = np.cos(th), np.sin(th)
        C = np.zeros((1, self.n_x))
        C[0, 2] = -u[1] * s - u[0] * c
        D = np.zeros((1, self.n_u))
        D[0, :3] = (-s, c, -self.d)
        return tracked_constraint(x, u, self.d), C, D

    def g1(self, x, u, t):
        return self._nh_rows(x, u)[0]

    def g1_jacobians(self, x, u, t):
        _, C, D = self._nh_rows(x, u)
        return C, D

    def track_speeds(self, x, u):
        return track_speeds(x, u, self.b)


class PlanarManipulatorModel(TrackedBaseModel):
    """Tracked base carrying a planar revolute arm with end-effector constraints.

    ``ee_mode`` is ``"none"``, ``"position"`` (pure-state rows
    ``r_ee(q) - r_ref(t)``) or ``"velocity"`` (state-input rows
    ``J(q) qdot - v_ref``). In velocity mode the reference velocity is
    ``r_ref'(t) + ee_gain * (r_ref(t) - r_ee(q))`` so that drift is pulled back.
    """

    def __init__(
        self,
        link_lengths: Sequence[float] = (1.0, 0.8, 0.5),
        d: float = 0.0,
        b: float = 0.5,
        mount: Sequence[float] = (0.0, 0.0),
        ee_mode: str = "none",
        reference: Optional[EeReference] = None,
        ee_gain: float = 0.0,
        nonholonomic: bool = True,
    ):
        if ee_mode not in ("none", "position", "velocity"):
            raise ValueError(f"unknown ee_mode {ee_mode!r}")
        if ee_mode != "none" and reference is None:
            raise ValueError("end-effector constraint needs a reference")
        self.link_lengths = np.asarray(link_lengths, dtype=float)
        self.mount = np.asarray(mount, dtype=float)
        self.ee_mode = ee_mode
        self.reference = reference
        self.ee_gain = float(ee_gain)
        super().__init__(
            d=d,
            b=b,
            n_arm=self.link_lengths.size,
            nonholonomic=nonholonomic,
            m1_extra=2 if ee_mode == "velocity" else 0,
            m2=2 if ee_mode == "position" else 0,
        )

    def with_reference(self, reference: EeReference) -> "PlanarManipulatorModel":
        return PlanarManipulatorModel(
            self.link_lengths, self.d, self.b, self.mount, self.ee_mode, reference, self.ee_gain, self.nonholonomic
        )

    # kinematics -------------------------------------------------------------

    def _links(self, q):
        th = q[2]
        psi = th + np.cumsum(q[3:])
        dirs = np.stack([np.cos(psi), np.sin(psi)], axis=1)
        c, s = np.cos(th), np.sin(th)
        mount_w = np.array([c * self.mount[0] - s * self.mount[1], s * self.mount[0] + c * self.mount[1]])
        return mount_w, dirs

    def ee_position(self, q) -> np.ndarray:
        mount_w, dirs = self._links(q)
        return q[:2] + mount_w + self.link_lengths @ dirs

    def ee_jacobian(self, q) -> np.ndarray:
        """World-frame planar end-effector Jacobian with respect to all coordinates (2 x n)."""
        mount_w, dirs = self._links(q)
        segs = self.link_lengths[:, None] * dirs
        tails = np.cumsum(segs[::-1], axis=0)[::-1]
        J = np.zeros((2, self.n_x))
        J[:, :2] = np.eye(2)
        J[:, 2] = _perp(mount_w + tails[0])
        for j in range(self.n_arm):
            J[:, 3 + j] = _perp(tails[j])
        return J

    def arm_jacobian(self, q) -> np.ndarray:
        return self.ee_jacobian(q)[:, 3:]

    def ee_velocity(self, q, qdot) -> np.ndarray:
        return self.ee_jacobian(q) @ qdot

    def _ee_velocity_dq(self, q, qdot):
        """d(J(q) qdot)/dq."""
        mount_w, dirs = self._links(q)
        omega = qdot[2] + np.cumsum(qdot[3:])
        terms = (omega * self.link_lengths)[:, None] * dirs
        tails = np.cumsum(terms[::-1], axis=0)[::-1]
        M = np.zeros((2, self.n_x))
        M[:, 2] = -qdot[2] * mount_w - tails[0]
        for j in range(self.n_arm):
            M[:, 3 + j] = -tails[j]
        return M

    def _v_ref(self, q, t):
        v = self.reference.velocity(t)
        if self.ee_gain:
            v = v + self.ee_gain * (self.reference.position(t) - self.ee_position(q))
        return v

    # constraints ------------------------------------------------------------

    def g1(self, x, u, t):
        rows = [super().g1(x, u, t)]
        if self.ee_mode == "velocity":
            rows.append(self.ee_velocity(x, u) - self._v_ref(x, t))
        return np.concatenate(rows)

    def g1_jacobians(self, x, u, t):
        C0, D0 = super().g1_jacobians(x, u, t)
        if self.ee_mode != "velocity":
            return C0, D0
        J = self.ee_jacobian(x)
        C1 = self._ee_velocity_dq(x, u) + self.ee_gain * J
        return np.vstack([C0, C1]), np.vstack([D0, J])

    def g2(self, x, t):
        if self.ee_mode != "position":
            return np.zeros(0)
        return self.ee_position(x) - self.reference.position(t)

    def g2_jacobian(self, x, t):
        if self.ee_mode != "position":
            return np.zeros((0, self.n_x))
        return self.ee_jacobian(x)


def ee_constraint(model: PlanarManipulatorModel, x, u, t, mode: str) -> np.ndarray:
    """End-effector residual in ``mode`` (``"position"`` or ``"velocity"``) for ``model.reference``."""
    if mode == "position":
        return model.ee_position(x) - model.reference.position(t)
    if mode == "velocity":
        return model.ee_velocity(x, u) - model._v_ref(x, t)
    raise ValueError(f"unknown mode {mode!r}")


def hold_reference(model: PlanarManipulatorModel, q0) -> FixedPoint:
    """Reference that keeps the end effector where it is in configuration ``q0``."""
    return FixedPoint(tuple(model.ee_position(np.asarray(q0, float))))
