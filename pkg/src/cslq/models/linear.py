"""Time-invariant linear system with affine equality constraints."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..system import SystemModel


class LinearSystemModel(SystemModel):
    """``xdot = A x + B u`` with ``C x + D u + e = 0`` and ``F x + h = 0``."""

    def __init__(self, A, B, C=None, D=None, e=None, F=None, h=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        n_x, n_u = B.shape
        if A.shape != (n_x, n_x):
            raise ValueError(f"A has shape {A.shape}, expected ({n_x}, {n_x})")
        self.A, self.B = A, B
        self.C, self.D, self.e = self._rows(C, D, e, n_x, n_u)
        self.F, _, self.h = self._rows(F, None, h, n_x, 0)
        super().__init__(n_x, n_u, self.C.shape[0], self.F.shape[0])

    @staticmethod
    def _rows(M, N: Optional[np.ndarray], v, n_x, n_u):
        if M is None:
            return np.zeros((0, n_x)), np.zeros((0, n_u)), np.zeros(0)
        M = np.atleast_2d(np.asarray(M, dtype=float))
        m = M.shape[0]
        N = np.zeros((m, n_u)) if N is None else np.atleast_2d(np.asarray(N, dtype=float))
        v = np.zeros(m) if v is None else np.asarray(v, dtype=float).reshape(m)
        if M.shape[1] != n_x or N.shape != (m, n_u):
            raise ValueError("constraint matrices do not match the system dimensions")
        return M, N, v

    def flow(self, x, u, t):
        return self.A @ x + self.B @ u

    def flow_jacobians(self, x, u, t):
        return self.A.copy(), self.B.copy()

    def g1(self, x, u, t):
        return self.C @ x + self.D @ u + self.e

    def g1_jacobians(self, x, u, t):
        return self.C.copy(), self.D.copy()

    def g2(self, x, t):
        return self.F @ x + self.h

    def g2_jacobian(self, x, t):
        return self.F.copy()
