"""Reduced wheeled-legged base: floating base plus four legs (steer yaw + wheel spin).

State ``[r_B (3), yaw, pitch, roll, steer_1..4, spin_1..4]`` (n_x = 14).
Input ``[omega_B (3), v_B (3), steer rates (4), spin rates (4)]`` with the base
twist expressed in the base frame. Orientation uses z-y-x Euler angles,
``R = Rz(yaw) Ry(pitch) Rx(roll)``.

Each wheel is a thin disc on flat ground. The wheel centre sits ``caster``
metres along the steering frame's x-axis from the steering axis (negative
values trail behind it, as on a shopping-cart caster) and ``leg_height``
below the mount; the contact point is ``radius`` below the centre. Each leg
contributes three rows: the velocity of its contact point, in world
coordinates by default or in base coordinates (same zero set and same
squared norm, but free of the orientation dependence).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..system import SystemModel

N_LEGS = 4
DEFAULT_MOUNTS = ((0.4, 0.3), (0.4, -0.3), (-0.4, 0.3), (-0.4, -0.3))
PITCH_SINGULARITY_MARGIN = 1e-3


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0, 0, 0], [0, -s, -c], [0, c, -s]])


def _dry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, 0, c], [0, 0, 0], [-c, 0, -s]])


def _drz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, -c, 0], [c, -s, 0], [0, 0, 0]])


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def rotation_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    return _rz(yaw) @ _ry(pitch) @ _rx(roll)


def rotation_zyx_derivatives(yaw, pitch, roll):
    Rz, Ry, Rx = _rz(yaw), _ry(pitch), _rx(roll)
    return _drz(yaw) @ Ry @ Rx, Rz @ _dry(pitch) @ Rx, Rz @ Ry @ _drx(roll)


def _check_pitch(pitch):
    if abs(abs(pitch) - np.pi / 2) < PITCH_SINGULARITY_MARGIN:
        raise ValueError(f"pitch {pitch:.6f} rad is within {PITCH_SINGULARITY_MARGIN} rad of the Euler singularity")


def euler_rates(angles, omega) -> np.ndarray:
    """z-y-x Euler angle rates ``(yaw, pitch, roll)'`` for a body-frame angular velocity."""
    _, pitch, roll = angles
    _check_pitch(pitch)
    sr, cr = np.sin(roll), np.cos(roll)
    a = sr * omega[1] + cr * omega[2]
    return np.array([a / np.cos(pitch), cr * omega[1] - sr * omega[2], omega[0] + np.tan(pitch) * a])


class Leg:
    """Geometry of one steerable, castered wheel leg."""

    def __init__(self, mount, caster: float, leg_height: float, radius: float):
        self.mount = np.array([mount[0], mount[1], 0.0], dtype=float)
        self.caster = float(caster)
        self.leg_height = float(leg_height)
        self.radius = float(radius)

    def contact_offset(self, steer: float) -> np.ndarray:
        """Base-to-contact-point vector ``r_BP`` in the base frame."""
        c, s = np.cos(steer), np.sin(steer)
        return self.mount + np.array([self.caster * c, self.caster * s, -(self.leg_height + self.radius)])

    def contact_velocity_base(self, steer, steer_rate, spin_rate) -> np.ndarray:
        """Contact-point velocity relative to the base, base frame.

        Centre velocity from the steering joint plus the wheel's spin
        ``R_J (omega_w x r_CP)`` with the axle along the steering frame's y-axis.
        """
        c, s = np.cos(steer), np.sin(steer)
        v_c = steer_rate * self.caster * np.array([-s, c, 0.0])
        v_spin = spin_rate * self.radius * np.array([-c, -s, 0.0])
        return v_c + v_spin


def wheel_contact_velocity(leg: Leg, steer, spin_rate, angles, omega, v, steer_rate=0.0) -> np.ndarray:
    """World-frame velocity of a wheel's ground contact point."""
    R = rotation_zyx(*angles)
    p = leg.contact_offset(steer)
    w = np.asarray(v, float) + np.cross(omega, p) + leg.contact_velocity_base(steer, steer_rate, spin_rate)
    return R @ w


class WheeledLeggedModel(SystemModel):
    """Floating base on four steerable wheels with rolling and ground-contact constraints (m1 = 12)."""

    def __init__(
        self,
        mounts: Sequence[Sequence[float]] = DEFAULT_MOUNTS,
        caster: float = -0.1,
        leg_height: float = 0.4,
        radius: float = 0.1,
        constraint_frame: str = "world",
    ):
        if constraint_frame not in ("world", "base"):
            raise ValueError("constraint_frame must be 'world' or 'base'")
        self.constraint_frame = constraint_frame
        if radius <= 0:
            raise ValueError("wheel radius must be positive")
        if len(mounts) != N_LEGS:
            raise ValueError(f"expected {N_LEGS} leg mounts")
        self.legs = [Leg(m, caster, leg_height, radius) for m in mounts]
        self._mounts = np.array([leg.mount for leg in self.legs])
        self.caster = float(caster)
        self.leg_height = float(leg_height)
        self.radius = float(radius)
        super().__init__(14, 14, 3 * N_LEGS, 0)

    # index helpers
    POS = slice(0, 3)
    ANG = slice(3, 6)
    STEER = slice(6, 10)
    SPIN = slice(10, 14)
    OMEGA = slice(0, 3)
    VEL = slice(3, 6)

    def flow(self, x, u, t):
        R = rotation_zyx(*x[self.ANG])
        xd = np.empty(14)
        xd[self.POS] = R @ u[self.VEL]
        xd[self.ANG] = euler_rates(x[self.ANG], u[self.OMEGA])
        xd[6:] = u[6:]
        return xd

    def flow_jacobians(self, x, u, t):
        yaw, pitch, roll = x[self.ANG]
        _check_pitch(pitch)
        om = u[self.OMEGA]
        v = u[self.VEL]
        R = rotation_zyx(yaw, pitch, roll)
        dR = rotation_zyx_derivatives(yaw, pitch, roll)
        sr, cr = np.sin(roll), np.cos(roll)
        sp, cp = np.sin(pitch), np.cos(pitch)
        a = sr * om[1] + cr * om[2]
        a_r = cr * om[1] - sr * om[2]

        A = np.zeros((14, 14))
        for k in range(3):
            A[0:3, 3 + k] = dR[k] @ v
        # rows yaw, pitch, roll; columns pitch (4), roll (5)
        A[3, 4] = a * sp / cp**2
        A[3, 5] = a_r / cp
        A[4, 5] = -a
        A[5, 4] = a / cp**2
        A[5, 5] = sp / cp * a_r

        B = np.zeros((14, 14))
        B[0:3, 3:6] = R
        B[3, 0:3] = (0.0, sr / cp, cr / cp)
        B[4, 0:3] = (0.0, cr, -sr)
        B[5, 0:3] = (1.0, sp / cp * sr, sp / cp * cr)
        B[6:, 6:] = np.eye(8)
        return A, B

    def _leg_terms(self, x, u):
        """Base-frame contact velocities ``w`` (4, 3), contact offsets ``p`` (4, 3) and steer ``(cos, sin)``."""
        steer = x[self.STEER]
        c, s = np.cos(steer), np.sin(steer)
        p = np.empty((N_LEGS, 3))
        p[:, 0] = self._mounts[:, 0] + self.caster * c
        p[:, 1] = self._mounts[:, 1] + self.caster * s
        p[:, 2] = -(self.leg_height + self.radius)
        ox, oy, oz = u[0], u[1], u[2]
        steer_v = u[6:10] * self.caster
        spin_v = u[10:14] * self.radius
        w = np.empty((N_LEGS, 3))
        w[:, 0] = u[3] + oy * p[:, 2] - oz * p[:, 1] - steer_v * s - spin_v * c
        w[:, 1] = u[4] + oz * p[:, 0] - ox * p[:, 2] + steer_v * c - spin_v * s
        w[:, 2] = u[5] + ox * p[:, 1] - oy * p[:, 0]
        return w, p, c, s

    def g1(self, x, u, t):
        w = self._leg_terms(x, u)[0]
        if self.constraint_frame == "base":
            return w.ravel()
        R = rotation_zyx(*x[self.ANG])
        return (w @ R.T).ravel()

    def g1_jacobians(self, x, u, t):
        yaw, pitch, roll = x[self.ANG]
        if self.constraint_frame == "base":
            R = np.eye(3)
            dR = (np.zeros((3, 3)),) * 3
        else:
            R = rotation_zyx(yaw, pitch, roll)
            dR = rotation_zyx_derivatives(yaw, pitch, roll)
        om = u[self.OMEGA]
        w, p, cs, ss = self._leg_terms(x, u)
        C = np.zeros((12, 14))
        D = np.zeros((12, 14))
        for i in range(N_LEGS):
            rows = slice(3 * i, 3 * i + 3)
            c, s = cs[i], ss[i]
            for k in range(3):
                C[rows, 3 + k] = dR[k] @ w[i]
            dp = self.caster * np.array([-s, c, 0.0])
            dw = (
                np.cross(om, dp)
                + u[6 + i] * self.caster * np.array([-c, -s, 0.0])
                + u[10 + i] * self.radius * np.array([s, -c, 0.0])
            )
            C[rows, 6 + i] = R @ dw
            D[rows, 0:3] = -R @ _skew(p[i])
            D[rows, 3:6] = R
            D[rows, 6 + i] = R @ dp
            D[rows, 10 + i] = R @ (self.radius * np.array([-c, -s, 0.0]))
        return C, D

    def contact_velocities(self, x, u) -> np.ndarray:
        """World-frame contact-point velocities, one row per leg."""
        return self.g1(x, u, 0.0).reshape(N_LEGS, 3)
