"""Constrained kinematic system models, linearization and derivative checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np


class DerivativeError(ArithmeticError):
    pass


def finite_difference_jacobian(fun: Callable[[np.ndarray], np.ndarray], point, epsilon: float = 1e-6, relative: bool = True):
    """Central-difference Jacobian of ``fun`` at ``point``.

    The step for coordinate ``i`` is ``epsilon * (1 + |point_i|)`` when
    ``relative`` is set, otherwise ``epsilon``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.array(point, dtype=float).ravel()
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = epsilon * (1.0 + abs(x[i])) if relative else epsilon
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2.0 * h)
    return jac


class SystemModel:
    """A kinematic system ``dx/dt = f(x, u, t)`` with equality constraints.

    ``g1(x, u, t) = 0`` holds ``m1`` state-input constraints and ``g2(x, t) = 0``
    holds ``m2`` pure-state constraints. Subclasses implement :meth:`flow`, the
    constraints they use, and preferably analytic Jacobians; any Jacobian that
    is not overridden falls back to central finite differences.
    """

    def __init__(self, n_x: int, n_u: int, m1: int = 0, m2: int = 0):
        if m1 > n_u:
            raise ValueError(f"m1={m1} state-input constraints exceed n_u={n_u} inputs; D cannot have full row rank")
        self.n_x = n_x
        self.n_u = n_u
        self.m1 = m1
        self.m2 = m2

    def flow(self, x, u, t):
        raise NotImplementedError

    def g1(self, x, u, t):
        return np.zeros(0)

    def g2(self, x, t):
        return np.zeros(0)

    def flow_jacobians(self, x, u, t):
        return fd_flow_jacobians(self, x, u, t)

    def g1_jacobians(self, x, u, t):
        return fd_g1_jacobians(self, x, u, t)

    def g2_jacobian(self, x, t):
        return fd_g2_jacobian(self, x, t)


def fd_flow_jacobians(model, x, u, t, epsilon=1e-6):
    A = finite_difference_jacobian(lambda z: model.flow(z, u, t), x, epsilon)
    B = finite_difference_jacobian(lambda v: model.flow(x, v, t), u, epsilon)
    return A, B


def fd_g1_jacobians(model, x, u, t, epsilon=1e-6):
    if model.m1 == 0:
        return np.zeros((0, model.n_x)), np.zeros((0, model.n_u))
    C = finite_difference_jacobian(lambda z: model.g1(z, u, t), x, epsilon)
    D = finite_difference_jacobian(lambda v: model.g1(x, v, t), u, epsilon)
    return C, D


def fd_g2_jacobian(model, x, t, epsilon=1e-6):
    if model.m2 == 0:
        return np.zeros((0, model.n_x))
    return finite_difference_jacobian(lambda z: model.g2(z, t), x, epsilon)


@dataclass(frozen=True, eq=False)
class LinearizedDynamics:
    """First-order expansion of dynamics and constraints about ``(x, u, t)``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    e: np.ndarray
    F: np.ndarray
    h: np.ndarray


def _check_finite(name, M):
    if np.isfinite(M).all():
        return
    bad = np.argwhere(~np.isfinite(M))
    if bad.size:
        raise DerivativeError(f"non-finite entry in {name} at index {tuple(int(i) for i in bad[0])}")


def linearize(model: SystemModel, x, u, t: float, derivatives: str = "analytic") -> LinearizedDynamics:
    """Jacobians of f, g1 and g2 plus the constraint residuals at ``(x, u, t)``.

    ``derivatives`` selects the model's own (analytic) providers or forces
    central finite differences (``"fd"``).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n_x,) or u.shape != (model.n_u,):
        raise ValueError(f"expected x ({model.n_x},), u ({model.n_u},); got {x.shape}, {u.shape}")
    if derivatives == "analytic":
        A, B = model.flow_jacobians(x, u, t)
        C, D = model.g1_jacobians(x, u, t)
        F = model.g2_jacobian(x, t)
    elif derivatives == "fd":
        A, B = fd_flow_jacobians(model, x, u, t)
        C, D = fd_g1_jacobians(model, x, u, t)
        F = fd_g2_jacobian(model, x, t)
    else:
        raise ValueError(f"unknown derivative provider {derivatives!r}")
    e = np.asarray(model.g1(x, u, t), dtype=float) if model.m1 else np.zeros(0)
    h = np.asarray(model.g2(x, t), dtype=float) if model.m2 else np.zeros(0)
    for name, M in (("f/dx", A), ("f/du", B), ("g1/dx", C), ("g1/du", D), ("g1", e), ("g2/dx", F), ("g2", h)):
        _check_finite(name, M)
    return LinearizedDynamics(
        np.asarray(A, float).reshape(model.n_x, model.n_x),
        np.asarray(B, float).reshape(model.n_x, model.n_u),
        np.asarray(C, float).reshape(model.m1, model.n_x),
        np.asarray(D, float).reshape(model.m1, model.n_u),
        e.reshape(model.m1),
        np.asarray(F, float).reshape(model.m2, model.n_x),
        h.reshape(model.m2),
    )


@dataclass
class DerivativeReport:
    tol: float
    max_error: dict = field(default_factory=dict)
    worst_sample: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.max_error.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.max_error.items() if v > self.tol]

    def __str__(self) -> str:
        lines = [f"derivative check (tol={self.tol:g}): {'PASS' if self.passed else 'FAIL'}"]
        for k, v in self.max_error.items():
            lines.append(f"  {k:6s} max |analytic - fd| = {v:.3e} (sample {self.worst_sample[k]})")
        return "\n".join(lines)


def verify_derivatives(model: SystemModel, samples: Iterable, tol: float = 1e-6) -> DerivativeReport:
    """Compare the model's Jacobians with central differences at ``(x, u, t)`` samples."""
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample")
    report = DerivativeReport(tol=tol)
    keys = ("f/dx", "f/du", "g1/dx", "g1/du", "g2/dx")
    for k in keys:
        report.max_error[k] = 0.0
        report.worst_sample[k] = None
    for idx, (x, u, t) in enumerate(samples):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        ana = linearize(model, x, u, t, "analytic")
        fd = linearize(model, x, u, t, "fd")
        for k, a, b in zip(keys, (ana.A, ana.B, ana.C, ana.D, ana.F), (fd.A, fd.B, fd.C, fd.D, fd.F)):
            err = float(np.max(np.abs(a - b))) if a.size else 0.0
            if err > report.max_error[k] or report.worst_sample[k] is None:
                report.max_error[k] = max(err, report.max_error[k])
                report.worst_sample[k] = idx
    return report


def feasible_input(model: SystemModel, x, u, t: float = 0.0) -> np.ndarray:
    """Project ``u`` onto the (linearized) state-input constraint manifold at ``x``.

    Exact for constraints affine in ``u``, which holds for every shipped model.
    """
    u = np.asarray(u, dtype=float)
    if model.m1 == 0:
        return u
    _, D = model.g1_jacobians(x, u, t)
    g = model.g1(x, u, t)
    return u - np.linalg.pinv(D, rcond=1e-10) @ g
