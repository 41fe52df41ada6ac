"""Constrained SLQ outer iteration: rollout, LQ approximation, backward pass, line search."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .approximation import LqApproximation, approximate
from .constrained_lqr import (
    ControllerUpdate,
    ProjectedCoefficients,
    RiccatiError,
    controller_update,
    project_coefficients,
    solve_riccati,
)
from .cost import Cost
from .integrator import IntegrationError, IntegratorSettings, rollout
from .system import SystemModel
from .trajectory import TimeVaryingController, Trajectory

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class LineSearchSettings:
    """Backtracking schedule and merit ``cost + nu * ISE``.

    ``merit_weight`` is the initial ``nu``. With ``adaptive_merit`` the weight
    is raised (never lowered) before each line search so that the full step,
    as predicted by the LQ model, lowers the merit by at least
    ``penalty_margin * nu * ISE``.
    """

    alpha_min: float = 1e-3
    reduction: float = 0.5
    merit_weight: float = 10.0
    merit_norm: str = "squared"
    adaptive_merit: bool = True
    penalty_margin: float = 0.1
    max_merit_weight: float = 1e12

    def __post_init__(self):
        if not (0 < self.alpha_min < 1):
            raise ValueError("alpha_min must lie in (0, 1)")
        if not (0 < self.reduction < 1):
            raise ValueError("reduction factor must lie in (0, 1)")
        if self.merit_weight <= 0:
            raise ValueError("merit weight must be positive")
        if self.merit_norm not in ("squared", "l2"):
            raise ValueError("merit_norm must be 'squared' or 'l2'")
        if not (0 < self.penalty_margin < 1):
            raise ValueError("penalty_margin must lie in (0, 1)")
        if self.max_merit_weight < self.merit_weight:
            raise ValueError("max_merit_weight must be at least merit_weight")

    def schedule(self) -> list[float]:
        alphas = [1.0]
        while alphas[-1] * self.reduction >= self.alpha_min * (1 - 1e-12):
            alphas.append(alphas[-1] * self.reduction)
        return alphas


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 30
    cost_rel_tol: float = 1e-4
    constraint_ise_tol: float = 1e-4
    line_search: LineSearchSettings = LineSearchSettings()
    forward: IntegratorSettings = IntegratorSettings()
    backward: IntegratorSettings = IntegratorSettings()
    divergence_bound: float = 1e6
    derivatives: str = "analytic"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.cost_rel_tol <= 0 or self.constraint_ise_tol <= 0 or self.divergence_bound <= 0:
            raise ValueError("solver tolerances and divergence bound must be positive")


@dataclass
class SolveReport:
    iterations: int
    costs: list[float]
    ises: list[float]
    merits: list[float]
    steps: list[tuple[float, float]]
    trajectory: Trajectory
    controller: TimeVaryingController
    converged: bool
    message: str = ""
    initial_cost: float = float("nan")
    initial_ise: float = float("nan")
    nominal_merits: list[float] = field(default_factory=list)
    merit_weights: list[float] = field(default_factory=list)
    rank_deficient_nodes: list[int] = field(default_factory=list)
    predicted_costs: list[float] = field(default_factory=list)
    iteration_times: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    last_update: Optional[ControllerUpdate] = None
    last_approximation: Optional[LqApproximation] = None

    def summary(self) -> str:
        lines = [
            f"converged: {self.converged}",
            f"iterations: {self.iterations}",
            f"final cost: {self.costs[-1] if self.costs else self.initial_cost:.10g}",
            f"final constraint ISE: {self.ises[-1] if self.ises else self.initial_ise:.6e}",
            f"wall time [s]: {self.wall_time:.3f}",
        ]
        if self.message:
            lines.append(f"message: {self.message}")
        return "\n".join(lines)

    def convergence_rows(self) -> list[list]:
        """``[iteration, cost, ise, merit_weight, merit, alpha, alpha_e]``; row 0 is the initial rollout."""
        rows = [[0, self.initial_cost, self.initial_ise, "", "", "", ""]]
        for i in range(self.iterations):
            a, ae = self.steps[i]
            rows.append([i + 1, self.costs[i], self.ises[i], self.merit_weights[i], self.merits[i], a, ae])
        return rows

    def write(self, directory) -> None:
        """Write ``trajectory.csv``, ``convergence.csv`` and ``summary.txt`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.trajectory.to_csv(directory / "trajectory.csv")
        with open(directory / "convergence.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "cost", "ise", "merit_weight", "merit", "alpha", "alpha_e"])
            for row in self.convergence_rows():
                writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        (directory / "summary.txt").write_text(self.summary() + "\n")


@dataclass
class _Evaluated:
    controller: TimeVaryingController
    traj: Trajectory
    cost: float
    ise: float

    def merit(self, weight: float, norm: str = "squared") -> float:
        return self.cost + weight * _violation(self.ise, norm)


def _violation(ise: float, norm: str) -> float:
    return ise if norm == "squared" else float(np.sqrt(max(ise, 0.0)))


def _evaluate(model, cost, ctrl, x0, t0, tf, settings: SolverSettings) -> _Evaluated:
    """Roll out ``ctrl``; running cost and ISE are integrated alongside the state."""

    def integrands(x, u, t):
        g1 = model.g1(x, u, t) if model.m1 else ()
        g2 = model.g2(x, t) if model.m2 else ()
        return (cost.running(x, u, t), float(np.dot(g1, g1) + np.dot(g2, g2)))

    traj, (running, ise) = rollout(model, ctrl, x0, t0, tf, settings.forward, quadrature=integrands)
    return _Evaluated(ctrl, traj, float(running + cost.terminal(traj.states[-1])), float(ise))


def updated_controller(nominal: Trajectory, update: ControllerUpdate, alpha: float, alpha_e: float) -> TimeVaryingController:
    """``K = L`` and ``u_ff = u_bar + alpha l + alpha_e l_e - L x_bar`` on the nominal grid."""
    u_bar = nominal.padded_inputs()
    x_bar = nominal.states
    u_ff = u_bar + alpha * update.l + alpha_e * update.l_e - np.einsum("kij,kj->ki", update.L, x_bar)
    return TimeVaryingController(nominal.grid, u_ff, update.L.copy())


@dataclass
class LineSearchResult:
    alpha: float
    alpha_e: float
    accepted: Optional[_Evaluated]
    trials: int
    reference_merit: float = float("nan")

    @property
    def success(self) -> bool:
        return self.accepted is not None


def _accepts(candidate_merit: float, nominal_merit: float) -> bool:
    return np.isfinite(candidate_merit) and candidate_merit <= nominal_merit + 1e-12 * max(1.0, abs(nominal_merit))


def line_search(
    update: ControllerUpdate,
    nominal: _Evaluated,
    model: SystemModel,
    cost: Cost,
    x0,
    t0: float,
    tf: float,
    settings: SolverSettings,
    merit_weight: Optional[float] = None,
) -> LineSearchResult:
    """First ``(alpha, alpha_e)`` on the schedule whose rollout does not increase the merit.

    Schedule: ``alpha_e = 1`` with ``alpha`` halving down to ``alpha_min``;
    then coupled ``alpha_e = alpha`` over the same schedule.

    Candidates are compared with the rollout of the zero step expressed in the
    same controller parameterization, so that interpolating the nominal
    input on its own grid does not show up as a spurious merit change.
    """
    ls = settings.line_search
    nu = ls.merit_weight if merit_weight is None else merit_weight
    alphas = ls.schedule()
    reference = nominal.merit(nu, ls.merit_norm)
    try:
        baseline = _evaluate(model, cost, updated_controller(nominal.traj, update, 0.0, 0.0), x0, t0, tf, settings)
        reference = baseline.merit(nu, ls.merit_norm)
    except IntegrationError:
        pass
    trials = 0
    candidates = [(a, 1.0) for a in alphas] + [(a, a) for a in alphas[1:]]
    for alpha, alpha_e in candidates:
        trials += 1
        ctrl = updated_controller(nominal.traj, update, alpha, alpha_e)
        try:
            cand = _evaluate(model, cost, ctrl, x0, t0, tf, settings)
        except (IntegrationError, FloatingPointError):
            continue
        if np.max(np.abs(cand.traj.states)) > settings.divergence_bound:
            continue
        if _accepts(cand.merit(nu, ls.merit_norm), reference):
            return LineSearchResult(alpha, alpha_e, cand, trials, reference)
    return LineSearchResult(0.0, 0.0, None, trials, reference)


def predicted_cost_change(lq: LqApproximation, update: ControllerUpdate, alpha: float = 1.0, alpha_e: float = 1.0) -> float:
    """Change of the quadratic cost model under the step, propagated through the linear model.

    Uses Heun's method on the rollout grid for ``dx' = A dx + B du`` with
    ``du = alpha l + alpha_e l_e + L dx``.
    """
    times = lq.times
    ff = alpha * update.l + alpha_e * update.l_e
    dx = np.zeros((len(times), lq.n_x))
    du = np.zeros((len(times), lq.n_u))
    du[0] = ff[0]
    with np.errstate(over="ignore", invalid="ignore"):
        return _propagate_and_evaluate(lq, update, ff, dx, du)


def _propagate_and_evaluate(lq, update, ff, dx, du):
    times = lq.times
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        f0 = lq.A[k] @ dx[k] + lq.B[k] @ du[k]
        x_pred = dx[k] + h * f0
        u_pred = ff[k + 1] + update.L[k + 1] @ x_pred
        f1 = lq.A[k + 1] @ x_pred + lq.B[k + 1] @ u_pred
        dx[k + 1] = dx[k] + 0.5 * h * (f0 + f1)
        du[k + 1] = ff[k + 1] + update.L[k + 1] @ dx[k + 1]
    zeros_x, zeros_u = np.zeros_like(dx), np.zeros_like(du)
    return lq.cost.model_value(dx, du) - lq.cost.model_value(zeros_x, zeros_u)


def required_merit_weight(predicted_change: float, violation: float, margin: float) -> float:
    """Smallest ``nu`` with ``predicted_change - nu * violation <= -margin * nu * violation``.

    The full step is predicted to remove the whole violation term of the merit.
    """
    if violation <= 0.0 or predicted_change <= 0.0:
        return 0.0
    return predicted_change / ((1.0 - margin) * violation)


def backward_pass(lq: LqApproximation, settings: SolverSettings) -> tuple[ControllerUpdate, ProjectedCoefficients, float]:
    """Project, integrate the Riccati-like equations and form the update on the rollout grid.

    Also returns the scalar value-function term at ``t0`` (a predicted-cost diagnostic).
    """
    proj = project_coefficients(lq)
    c = lq.cost
    sol = solve_riccati(proj, lq.times, c.Qf, c.qf, c.qf0, settings.backward)
    S, s, s_e, s_sc = sol.at(lq.times)
    update = controller_update(S, s, s_e, proj, lq.times)
    return update, proj, float(s_sc[0])


def solve(
    model: SystemModel,
    cost: Cost,
    x0,
    t0: float,
    tf: float,
    init_ctrl: Optional[TimeVaryingController] = None,
    settings: SolverSettings = SolverSettings(),
) -> SolveReport:
    """Run constrained SLQ from ``init_ctrl`` (zero input when omitted).

    Converged means the relative cost change of the last iteration is below
    ``cost_rel_tol`` and the constraint ISE is below ``constraint_ise_tol``.
    """
    start = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    if init_ctrl is None:
        init_ctrl = TimeVaryingController.zeros(t0, tf, model.n_u, model.n_x)
    try:
        current = _evaluate(model, cost, init_ctrl, x0, t0, tf, settings)
    except IntegrationError as exc:
        raise DivergenceError(f"initial rollout failed: {exc}", 0) from exc
    if np.max(np.abs(current.traj.states)) > settings.divergence_bound:
        raise DivergenceError("initial rollout exceeded the divergence bound", 0)

    report = SolveReport(
        iterations=0,
        costs=[],
        ises=[],
        merits=[],
        steps=[],
        trajectory=current.traj,
        controller=current.controller,
        converged=False,
        initial_cost=current.cost,
        initial_ise=current.ise,
    )
    ls = settings.line_search
    nu = ls.merit_weight
    for it in range(1, settings.max_iterations + 1):
        t_it = time.perf_counter()
        lq = approximate(model, cost, current.traj, settings.derivatives)
        try:
            update, proj, predicted = backward_pass(lq, settings)
        except RiccatiError as exc:
            report.message = f"backward pass failed at iteration {it}: {exc}"
            log.warning(report.message)
            break
        if proj.n_rank_deficient:
            log.debug("iteration %d: %d rank-deficient constraint nodes", it, proj.n_rank_deficient)
        if ls.adaptive_merit:
            violation = _violation(current.ise, ls.merit_norm)
            change = predicted_cost_change(lq, update)
            if np.isfinite(change):
                nu = min(max(nu, required_merit_weight(change, violation, ls.penalty_margin)), ls.max_merit_weight)
        result = line_search(update, current, model, cost, x0, t0, tf, settings, nu)
        if not result.success:
            report.message = f"line search failed at iteration {it}"
            log.info(report.message)
            break
        prev = current
        current = result.accepted
        report.iterations = it
        report.costs.append(current.cost)
        report.ises.append(current.ise)
        report.merits.append(current.merit(nu, ls.merit_norm))
        report.nominal_merits.append(result.reference_merit)
        report.merit_weights.append(nu)
        report.steps.append((result.alpha, result.alpha_e))
        report.rank_deficient_nodes.append(proj.n_rank_deficient)
        report.predicted_costs.append(predicted)
        report.iteration_times.append(time.perf_counter() - t_it)
        report.trajectory = current.traj
        report.controller = current.controller
        report.last_update = update
        report.last_approximation = lq
        rel = abs(prev.cost - current.cost) / max(abs(prev.cost), 1e-12)
        log.debug(
            "iteration %d: cost %.8g ise %.3e alpha %.3g/%.3g nu %.3g rel %.2e",
            it, current.cost, current.ise, result.alpha, result.alpha_e, nu, rel,
        )
        if rel < settings.cost_rel_tol and current.ise < settings.constraint_ise_tol:
            report.converged = True
            break
    else:
        report.message = f"reached max_iterations={settings.max_iterations}"
    report.wall_time = time.perf_counter() - start
    return report
