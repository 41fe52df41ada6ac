"""Cost functions and their second-order expansion along a nominal trajectory.

Expansion convention (the source of most SLQ sign/scale bugs, so stated once)::

    L~ = q + q_x' dx + r' du + dx' P du + 1/2 dx' Q dx + 1/2 du' R du
    Phi~ = q_f + q_f' dx + 1/2 dx' Q_f dx

For ``u' W u`` this gives ``r = 2 W u`` and ``R = 2 W``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .system import finite_difference_jacobian
from .trajectory import Trajectory, trapezoid


class Cost:
    """Bolza cost ``Phi(x(tf)) + int L(x, u, t) dt``.

    Subclasses implement :meth:`running` and :meth:`terminal`; the expansions
    default to central differences.
    """

    def running(self, x, u, t) -> float:
        raise NotImplementedError

    def terminal(self, x) -> float:
        raise NotImplementedError

    def running_expansion(self, x, u, t):
        """Return ``(q, q_x, r, P, Q, R)`` about ``(x, u)``."""
        n_x = x.size
        z = np.concatenate([x, u])

        def f(v):
            return np.array([self.running(v[:n_x], v[n_x:], t)])

        def grad(v):
            return finite_difference_jacobian(f, v, 1e-5)[0]

        g = grad(z)
        H = finite_difference_jacobian(grad, z, 1e-4)
        H = 0.5 * (H + H.T)
        return float(f(z)[0]), g[:n_x], g[n_x:], H[:n_x, n_x:], H[:n_x, :n_x], H[n_x:, n_x:]

    def terminal_expansion(self, x):
        """Return ``(q_f, q_f vector, Q_f)`` about ``x``."""

        def f(v):
            return np.array([self.terminal(v)])

        def grad(v):
            return finite_difference_jacobian(f, v, 1e-5)[0]

        H = finite_difference_jacobian(grad, x, 1e-4)
        return float(f(x)[0]), grad(x), 0.5 * (H + H.T)


def _check_psd(name, M, strict=False):
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"cost weight {name} must be symmetric")
    w = np.linalg.eigvalsh(M) if M.size else np.zeros(0)
    if strict and (w.size == 0 or w.min() <= 0):
        raise ValueError(f"cost weight {name} must be positive definite (min eigenvalue {w.min() if w.size else 'n/a'})")
    if not strict and w.size and w.min() < -1e-12:
        raise ValueError(f"cost weight {name} must be positive semidefinite (min eigenvalue {w.min():.3g})")


@dataclass(frozen=True, eq=False)
class QuadraticCost(Cost):
    """``int u'Ru + (x-x_r)'Q(x-x_r) dt + (x(tf)-x_r)'Qf(x(tf)-x_r)``.

    ``Q`` defaults to zero: intermediate states are not penalized.
    """

    R: np.ndarray
    Qf: np.ndarray
    x_r: np.ndarray
    Q: Optional[np.ndarray] = None

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        Qf = np.atleast_2d(np.asarray(self.Qf, dtype=float))
        x_r = np.asarray(self.x_r, dtype=float).ravel()
        Q = np.zeros_like(Qf) if self.Q is None else np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Qf.shape != (x_r.size, x_r.size) or Q.shape != Qf.shape:
            raise ValueError(f"state weights must be {x_r.size}x{x_r.size}")
        _check_psd("R", R, strict=True)
        _check_psd("Q", Q)
        _check_psd("Qf", Qf)
        for name, v in (("R", R), ("Qf", Qf), ("x_r", x_r), ("Q", Q)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def diagonal(cls, R_diag, Qf_diag, x_r, Q_diag=None) -> "QuadraticCost":
        return cls(np.diag(R_diag), np.diag(Qf_diag), np.asarray(x_r, float), None if Q_diag is None else np.diag(Q_diag))

    @property
    def n_x(self) -> int:
        return self.x_r.size

    @property
    def n_u(self) -> int:
        return self.R.shape[0]

    def running(self, x, u, t) -> float:
        dx = x - self.x_r
        return float(u @ self.R @ u + dx @ self.Q @ dx)

    def terminal(self, x) -> float:
        dx = x - self.x_r
        return float(dx @ self.Qf @ dx)

    def running_expansion(self, x, u, t):
        dx = x - self.x_r
        return (
            float(u @ self.R @ u + dx @ self.Q @ dx),
            2.0 * self.Q @ dx,
            2.0 * self.R @ u,
            np.zeros((x.size, u.size)),
            2.0 * self.Q,
            2.0 * self.R,
        )

    def terminal_expansion(self, x):
        dx = x - self.x_r
        return float(dx @ self.Qf @ dx), 2.0 * self.Qf @ dx, 2.0 * self.Qf


@dataclass(frozen=True, eq=False)
class CostQuadratization:
    """Per-node Taylor coefficients in deviation variables (see module docstring)."""

    times: np.ndarray
    q0: np.ndarray  # (N,)
    q: np.ndarray  # (N, n_x)
    r: np.ndarray  # (N, n_u)
    P: np.ndarray  # (N, n_x, n_u)
    Q: np.ndarray  # (N, n_x, n_x)
    R: np.ndarray  # (N, n_u, n_u)
    qf0: float
    qf: np.ndarray
    Qf: np.ndarray

    def model_value(self, dx: np.ndarray, du: np.ndarray) -> float:
        """Evaluate the quadratic model for per-node deviations ``dx`` (N, n_x), ``du`` (N, n_u)."""
        run = (
            self.q0
            + np.einsum("ki,ki->k", self.q, dx)
            + np.einsum("ki,ki->k", self.r, du)
            + np.einsum("ki,kij,kj->k", dx, self.P, du)
            + 0.5 * np.einsum("ki,kij,kj->k", dx, self.Q, dx)
            + 0.5 * np.einsum("ki,kij,kj->k", du, self.R, du)
        )
        d = dx[-1]
        return trapezoid(run, self.times) + self.qf0 + float(self.qf @ d) + 0.5 * float(d @ self.Qf @ d)


def evaluate_cost(cost: Cost, traj: Trajectory) -> float:
    """Trapezoid-rule running cost on the trajectory grid plus the terminal cost."""
    u = traj.padded_inputs()
    run = np.array([cost.running(x, ui, t) for t, x, ui in zip(traj.times, traj.states, u)])
    return trapezoid(run, traj.times) + cost.terminal(traj.states[-1])


def quadratize(cost: Cost, traj: Trajectory) -> CostQuadratization:
    u = traj.padded_inputs()
    parts = [cost.running_expansion(x, ui, t) for t, x, ui in zip(traj.times, traj.states, u)]
    qf0, qf, Qf = cost.terminal_expansion(traj.states[-1])
    return CostQuadratization(
        traj.times.copy(),
        np.array([p[0] for p in parts]),
        np.array([p[1] for p in parts]),
        np.array([p[2] for p in parts]),
        np.array([p[3] for p in parts]),
        np.array([p[4] for p in parts]),
        np.array([p[5] for p in parts]),
        qf0,
        np.asarray(qf, float),
        np.asarray(Qf, float),
    )


def _fd_gradient_hessian(f, z, step):
    """Central-difference gradient and Hessian of a scalar function from function values only.

    Both stencils are exact for quadratics at any step, so a unit step keeps
    round-off small there; general costs need a smaller step and a looser
    tolerance.
    """
    n = z.size
    H = np.empty((n, n))
    g = np.empty(n)
    f0 = f(z)
    E = np.eye(n) * step
    for i in range(n):
        fp, fm = f(z + E[i]), f(z - E[i])
        g[i] = (fp - fm) / (2 * step)
        H[i, i] = (fp - 2 * f0 + fm) / step**2
        for j in range(i):
            H[i, j] = H[j, i] = (
                f(z + E[i] + E[j]) - f(z + E[i] - E[j]) - f(z - E[i] + E[j]) + f(z - E[i] - E[j])
            ) / (4 * step**2)
    return g, H


def verify_expansion(cost: Cost, samples, tol: float = 1e-8, step: float = 1.0) -> dict:
    """Max deviation of the cost's expansions from finite differences over ``(x, u, t)`` samples.

    Returns ``{name: max abs error}`` for the running gradient/Hessian blocks
    and the terminal gradient/Hessian, plus ``"passed"``.
    """
    errs = dict.fromkeys(("q_x", "r", "P", "Q", "R", "q_f", "Q_f"), 0.0)
    for x, u, t in samples:
        x, u = np.asarray(x, float), np.asarray(u, float)
        n_x = x.size
        _, q_x, r, P, Q, R = cost.running_expansion(x, u, t)
        g, H = _fd_gradient_hessian(lambda z: cost.running(z[:n_x], z[n_x:], t), np.concatenate([x, u]), step)
        pairs = {"q_x": (q_x, g[:n_x]), "r": (r, g[n_x:]), "P": (P, H[:n_x, n_x:]), "Q": (Q, H[:n_x, :n_x]), "R": (R, H[n_x:, n_x:])}
        _, q_f, Q_f = cost.terminal_expansion(x)
        gf, Hf = _fd_gradient_hessian(cost.terminal, x, step)
        pairs.update({"q_f": (q_f, gf), "Q_f": (Q_f, Hf)})
        for k, (a, b) in pairs.items():
            a = np.asarray(a, float)
            if a.size:
                errs[k] = max(errs[k], float(np.max(np.abs(a - b))))
    errs["passed"] = all(v <= tol for v in errs.values())
    return errs
