"""Continuous-time constrained SLQ for kinematic robots with equality constraints."""

from .constrained_lqr import compliance_residuals, controller_update, project, solve_riccati
from .config import ConfigError, TaskConfig, load
from .cost import QuadraticCost, evaluate_cost, quadratize
from .integrator import IntegratorSettings, integrate_adaptive, rollout
from .mpc import DisturbanceSettings, MpcSettings, mpc_step, run_episode
from .slq import DivergenceError, LineSearchSettings, SolveReport, SolverSettings, solve
from .system import SystemModel, linearize, verify_derivatives
from .trajectory import TimeGrid, TimeVaryingController, Trajectory, constraint_ise, evaluate_control

__all__ = [
    "ConfigError",
    "DisturbanceSettings",
    "DivergenceError",
    "IntegratorSettings",
    "LineSearchSettings",
    "MpcSettings",
    "QuadraticCost",
    "SolveReport",
    "SolverSettings",
    "SystemModel",
    "TaskConfig",
    "TimeGrid",
    "TimeVaryingController",
    "Trajectory",
    "compliance_residuals",
    "constraint_ise",
    "controller_update",
    "evaluate_control",
    "evaluate_cost",
    "integrate_adaptive",
    "linearize",
    "load",
    "mpc_step",
    "project",
    "quadratize",
    "rollout",
    "run_episode",
    "solve",
    "solve_riccati",
    "verify_derivatives",
]
