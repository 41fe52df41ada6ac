"""Constrained LQR subproblem: constraint projection, backward Riccati pass, controller update.

All per-node quantities carry a leading node axis; single-node arrays work too.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .approximation import LqApproximation
from .integrator import IntegrationError, IntegratorSettings, integrate_adaptive
from .trajectory import TimeGrid

log = logging.getLogger(__name__)

RANK_TOL = 1e-9


def _T(M):
    return np.swapaxes(M, -1, -2)


class RiccatiError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.6g})")
        self.t = t


@dataclass(frozen=True, eq=False)
class ProjectedCoefficients:
    D_dag: np.ndarray
    A_tilde: np.ndarray
    C_tilde: np.ndarray
    D_tilde: np.ndarray
    e_tilde: np.ndarray
    Q_tilde: np.ndarray
    q_tilde: np.ndarray
    R_tilde: np.ndarray
    # unprojected data the backward pass and the update still need
    B: np.ndarray
    R: np.ndarray
    R_inv: np.ndarray
    P: np.ndarray
    r: np.ndarray
    q0: np.ndarray
    rank_deficient: np.ndarray

    @property
    def n_rank_deficient(self) -> int:
        return int(np.count_nonzero(self.rank_deficient))


def _sym_pinv(M, rank_tol=RANK_TOL):
    """Pseudo-inverse of symmetric PSD stacks via eigendecomposition, cut at ``rank_tol * max eig``."""
    w, V = np.linalg.eigh(M)
    w_max = np.max(np.abs(w), axis=-1, keepdims=True)
    keep = w > rank_tol * np.maximum(w_max, np.finfo(float).tiny)
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    pinv = (V * inv_w[..., None, :]) @ _T(V)
    deficient = ~np.all(keep, axis=-1)
    return pinv, deficient


def project(A, B, C, D, e, F, h, q0, q, r, P, Q, R, rank_tol: float = RANK_TOL) -> ProjectedCoefficients:
    """Compute ``D_dag`` and the tilde coefficients of the constrained LQ problem.

    ``D_dag = R^-1 D' (D R^-1 D')^-1``; when ``D R^-1 D'`` is rank deficient its
    inverse is replaced by an eigenvalue-thresholded pseudo-inverse and the node
    is flagged.
    """
    A, B, C, D, e, F, h = (np.asarray(v, dtype=float) for v in (A, B, C, D, e, F, h))
    q0, q, r, P, Q, R = (np.asarray(v, dtype=float) for v in (q0, q, r, P, Q, R))
    n_u = B.shape[-1]
    R_inv = np.linalg.inv(R)
    m1 = D.shape[-2]
    eye = np.broadcast_to(np.eye(n_u), R.shape)
    FtF = _T(F) @ F
    Fth = (_T(F) @ h[..., None])[..., 0]
    if m1 == 0:
        D_dag = np.zeros(R.shape[:-2] + (n_u, 0))
        deficient = np.zeros(R.shape[:-2], dtype=bool)
        zero_un = np.zeros(B.shape[:-2] + (n_u, A.shape[-1]))
        return ProjectedCoefficients(
            D_dag, A.copy(), zero_un, np.zeros_like(R), np.zeros(r.shape), Q + FtF, q + Fth, R.copy(),
            B, R, R_inv, P, r, q0, deficient,
        )
    RiDt = R_inv @ _T(D)
    M_pinv, deficient = _sym_pinv(D @ RiDt, rank_tol)
    D_dag = RiDt @ M_pinv
    C_t = D_dag @ C
    D_t = D_dag @ D
    e_t = (D_dag @ e[..., None])[..., 0]
    A_t = A - B @ C_t
    PC = P @ C_t
    Q_t = Q + _T(C_t) @ R @ C_t - PC - _T(PC) + FtF
    q_t = q - (_T(C_t) @ r[..., None])[..., 0] + Fth
    I_D = eye - D_t
    R_t = _T(I_D) @ R @ I_D
    Q_t = 0.5 * (Q_t + _T(Q_t))
    R_t = 0.5 * (R_t + _T(R_t))
    return ProjectedCoefficients(D_dag, A_t, C_t, D_t, e_t, Q_t, q_t, R_t, B, R, R_inv, P, r, q0, deficient)


def project_coefficients(lq: LqApproximation, rank_tol: float = RANK_TOL) -> ProjectedCoefficients:
    c = lq.cost
    proj = project(lq.A, lq.B, lq.C, lq.D, lq.e, lq.F, lq.h, c.q0, c.q, c.r, c.P, c.Q, c.R, rank_tol)
    if proj.n_rank_deficient:
        log.debug("D R^-1 D' rank deficient at %d/%d nodes; using pseudo-inverse", proj.n_rank_deficient, len(c.q0))
    return proj


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Backward-pass solution on its own (ascending) adaptive grid."""

    grid: TimeGrid
    S: np.ndarray
    s: np.ndarray
    s_e: np.ndarray
    s_scalar: np.ndarray

    def at(self, times) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Values at ``times``; exact at grid nodes, linear in between."""
        nodes = self.grid.nodes
        times = np.asarray(times, dtype=float)
        idx = np.clip(np.searchsorted(nodes, times), 0, nodes.size - 1)
        if np.all(nodes[idx] == times):
            return self.S[idx], self.s[idx], self.s_e[idx], self.s_scalar[idx]
        out = []
        for arr in (self.S, self.s, self.s_e, self.s_scalar):
            vals = []
            for t in times:
                k, w = self.grid.locate(float(t))
                vals.append((1 - w) * arr[k] + w * arr[k + 1])
            out.append(np.array(vals))
        return tuple(out)


def solve_riccati(
    proj: ProjectedCoefficients,
    times,
    Q_tf,
    q_tf,
    q_tf_scalar: float,
    settings: IntegratorSettings = IntegratorSettings(),
    symmetry_tol: float = 1e-6,
) -> RiccatiSolution:
    """Integrate the final-value Riccati-like equations from ``times[-1]`` back to ``times[0]``.

    Per-node data is interpolated linearly in time. The integrator is forced
    to land on every node of ``times`` so the update can be formed there with
    exact node data. ``S`` is symmetrized after each accepted step.
    """
    times = np.asarray(times, dtype=float)
    N = times.size
    n = proj.A_tilde.shape[-1]
    m = proj.B.shape[-1]
    Q_tf = np.asarray(Q_tf, dtype=float)
    if not np.allclose(Q_tf, Q_tf.T, atol=1e-12):
        raise ValueError("terminal weight must be symmetric")

    # L~' R~ L~ = G' W G with G = P' + B'S and W = R^-1 R~ R^-1.
    W = proj.R_inv @ proj.R_tilde @ proj.R_inv
    c_e = (_T(proj.C_tilde) @ proj.R @ proj.e_tilde[..., None])[..., 0]
    blocks = [
        ("At", proj.A_tilde, (n, n)),
        ("Qt", proj.Q_tilde, (n, n)),
        ("qt", proj.q_tilde, (n,)),
        ("Bt", _T(proj.B), (m, n)),
        ("Pt", _T(proj.P), (m, n)),
        ("W", W, (m, m)),
        ("r", proj.r, (m,)),
        ("et", proj.e_tilde, (m,)),
        ("ce", c_e, (n,)),
        ("q0", proj.q0[:, None], (1,)),
    ]
    flat = np.concatenate([b[1].reshape(N, -1) for b in blocks], axis=1)
    slices = {}
    off = 0
    for name, _, shape in blocks:
        size = int(np.prod(shape))
        slices[name] = (slice(off, off + size), shape)
        off += size

    nn = n * n
    cache = {"t": None}

    def data(t):
        if cache["t"] == t:
            return cache["d"]
        if t <= times[0]:
            row = flat[0]
        elif t >= times[-1]:
            row = flat[-1]
        else:
            k = int(np.searchsorted(times, t, side="right")) - 1
            w = (t - times[k]) / (times[k + 1] - times[k])
            row = (1.0 - w) * flat[k] + w * flat[k + 1]
        d = {name: row[sl].reshape(shape) for name, (sl, shape) in slices.items()}
        cache["t"] = t
        cache["d"] = d
        return d

    def rhs(t, y):
        d = data(t)
        S = y[:nn].reshape(n, n)
        s = y[nn : nn + n]
        se = y[nn + n : nn + 2 * n]
        At, Bt, W_ = d["At"], d["Bt"], d["W"]
        G = d["Pt"] + Bt @ S
        WG = W_ @ G
        AtS = At.T @ S
        dS = -(AtS + AtS.T - G.T @ WG + d["Qt"])
        g = d["r"] + Bt @ s
        ds = -(At.T @ s - WG.T @ g + d["qt"])
        dse = -(At.T @ se - WG.T @ (Bt @ se) + d["ce"] - G.T @ d["et"])
        dsc = -(d["q0"] - g @ (W_ @ g))
        return np.concatenate([dS.ravel(), ds, dse, dsc])

    def symmetrize(y):
        S = y[:nn].reshape(n, n)
        asym = np.max(np.abs(S - S.T)) if nn else 0.0
        scale = 1.0 + np.max(np.abs(S)) if nn else 1.0
        if asym > symmetry_tol * scale:
            raise RiccatiError(f"Riccati matrix asymmetry {asym:.3g} exceeds tolerance", float("nan"))
        y = y.copy()
        y[:nn] = (0.5 * (S + S.T)).ravel()
        return y

    y_f = np.concatenate([Q_tf.ravel(), np.asarray(q_tf, float), np.zeros(n), [float(q_tf_scalar)]])
    try:
        grid, ys = integrate_adaptive(rhs, y_f, times[-1], times[0], settings, stops=times[1:-1], project=symmetrize)
    except IntegrationError as exc:
        raise RiccatiError(f"backward pass failed: {exc}", exc.t) from exc
    M = ys.shape[0]
    return RiccatiSolution(
        grid,
        ys[:, :nn].reshape(M, n, n),
        ys[:, nn : nn + n],
        ys[:, nn + n : nn + 2 * n],
        ys[:, -1],
    )


@dataclass(frozen=True, eq=False)
class ControllerUpdate:
    times: np.ndarray
    L: np.ndarray
    l: np.ndarray
    l_e: np.ndarray


def controller_update(S, s, s_e, proj: ProjectedCoefficients, times=None) -> ControllerUpdate:
    """Feedback ``L`` and feedforward directions ``l``, ``l_e`` from the Riccati solution.

    ``S``, ``s``, ``s_e`` are the Riccati values at the nodes of ``proj``.
    """
    n_u = proj.B.shape[-1]
    I_D = np.eye(n_u) - proj.D_tilde
    L_t = proj.R_inv @ (_T(proj.P) + _T(proj.B) @ S)
    l_t = (proj.R_inv @ (proj.r[..., None] + _T(proj.B) @ s[..., None]))[..., 0]
    le_t = (proj.R_inv @ _T(proj.B) @ s_e[..., None])[..., 0]
    L = -I_D @ L_t - proj.C_tilde
    l = -(I_D @ l_t[..., None])[..., 0]
    l_e = -(I_D @ le_t[..., None])[..., 0] - proj.e_tilde
    return ControllerUpdate(None if times is None else np.asarray(times), L, l, l_e)


def compliance_residuals(C, D, e, update: ControllerUpdate, range_only: bool = False) -> dict:
    """Max over nodes of ``|C + D L|``, ``|D l|`` and ``|D l_e + e|``.

    With ``range_only`` the residuals are first projected onto range(D), which
    is the part a pseudo-inverse projection can annihilate.
    """
    r1 = C + D @ update.L
    r2 = (D @ update.l[..., None])[..., 0]
    r3 = (D @ update.l_e[..., None])[..., 0] + e
    if range_only and D.shape[-2]:
        U, sv, _ = np.linalg.svd(D)
        keep = sv > RANK_TOL * sv[..., :1]
        Uk = U[..., :, : sv.shape[-1]] * keep[..., None, :]
        Pi = Uk @ _T(Uk)
        r1 = Pi @ r1
        r2 = (Pi @ r2[..., None])[..., 0]
        r3 = (Pi @ r3[..., None])[..., 0]

    def mx(a):
        return float(np.max(np.abs(a))) if a.size else 0.0

    return {"C+DL": mx(r1), "Dl": mx(r2), "Dl_e+e": mx(r3)}
