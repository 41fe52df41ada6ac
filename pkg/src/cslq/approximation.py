"""Linear-quadratic approximation of the optimal control problem along a rollout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import Cost, CostQuadratization, quadratize
from .system import SystemModel, linearize
from .trajectory import Trajectory


@dataclass(frozen=True, eq=False)
class LqApproximation:
    """Stacked per-node dynamics/constraint Jacobians and cost coefficients.

    Arrays carry a leading node axis matching ``traj.grid``.
    """

    traj: Trajectory
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    e: np.ndarray
    F: np.ndarray
    h: np.ndarray
    cost: CostQuadratization

    @property
    def times(self) -> np.ndarray:
        return self.traj.times

    @property
    def n_x(self) -> int:
        return self.A.shape[1]

    @property
    def n_u(self) -> int:
        return self.B.shape[2]


def approximate(model: SystemModel, cost: Cost, traj: Trajectory, derivatives: str = "analytic") -> LqApproximation:
    u = traj.padded_inputs()
    lins = [linearize(model, x, ui, t, derivatives) for t, x, ui in zip(traj.times, traj.states, u)]

    def stack(name):
        return np.array([getattr(lin, name) for lin in lins])

    return LqApproximation(
        traj,
        stack("A"),
        stack("B"),
        stack("C"),
        stack("D"),
        stack("e"),
        stack("F"),
        stack("h"),
        quadratize(cost, traj),
    )
