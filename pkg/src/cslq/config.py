"""Task configuration files: sectioned ``key = value`` text with comma-separated arrays.

Sections: ``[task]``, ``[model]``, ``[reference]`` (optional), ``[problem]``,
``[cost]``, ``[solver]``, ``[mpc]`` (optional), ``[disturbance]`` (optional).
Every key has a default except the problem and cost arrays, and
``serialize(parse(text))`` writes every field explicitly so that a second
parse reproduces the same :class:`TaskConfig`.
"""

import configparser
import dataclasses
import re
import typing
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .cost import QuadraticCost
from .integrator import IntegratorSettings
from .models import (
    Circle,
    FigureEight,
    FixedPoint,
    LineSegment,
    PlanarManipulatorModel,
    TrackedBaseModel,
    WheeledLeggedModel,
    hold_reference,
)
from .models.wheeled import DEFAULT_MOUNTS
from .mpc import DisturbanceSettings, MpcSettings
from .slq import LineSearchSettings, SolverSettings


class ConfigError(ValueError):
    """Invalid task configuration; the message names the section, key and line when known."""


@dataclass(frozen=True)
class ModelConfig:
    type: str = "tracked"
    d: float = 0.0
    b: float = 0.5
    nonholonomic: bool = True
    link_lengths: tuple[float, ...] = (1.0, 0.8, 0.5)
    mount: tuple[float, ...] = (0.0, 0.0)
    ee_mode: str = "none"
    ee_gain: float = 0.0
    caster: float = -0.1
    leg_height: float = 0.4
    radius: float = 0.1
    mounts: tuple[float, ...] = tuple(v for m in DEFAULT_MOUNTS for v in m)
    constraint_frame: str = "world"


@dataclass(frozen=True)
class ReferenceConfig:
    """End-effector reference. ``relative`` offsets every point by the end-effector position at ``x0``."""

    kind: str = "hold"
    relative: bool = False
    point: tuple[float, ...] = (0.0, 0.0)
    start: tuple[float, ...] = (0.0, 0.0)
    end: tuple[float, ...] = (0.0, 0.0)
    t_start: float = 0.0
    t_end: float = 1.0
    center: tuple[float, ...] = (0.0, 0.0)
    radius: float = 0.5
    size: float = 0.5
    period: float = 10.0
    phase: float = 0.0


@dataclass(frozen=True)
class ProblemConfig:
    x0: tuple[float, ...] = ()
    x_r: tuple[float, ...] = ()
    horizon: float = 5.0


@dataclass(frozen=True)
class CostConfig:
    R: tuple[float, ...] = ()
    Qf: tuple[float, ...] = ()
    Q: tuple[float, ...] = ()


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 30
    cost_rel_tol: float = 1e-4
    constraint_ise_tol: float = 1e-4
    merit_weight: float = 10.0
    merit_norm: str = "squared"
    adaptive_merit: bool = True
    alpha_min: float = 1e-3
    reduction: float = 0.5
    abs_tol: float = 1e-6
    rel_tol: float = 1e-6
    max_step: float = 0.05
    divergence_bound: float = 1e6


@dataclass(frozen=True)
class MpcConfig:
    horizon: float = 15.0
    inner_rate: float = 250.0
    outer_rate: float = 10.0
    estimator_rate: float = 20.0
    warm_start: bool = True
    warm_iterations: int = 3
    cold_tol: float = 1e-6
    warm_tol: float = 1e-4
    goal_tolerance: float = 0.01
    goal_angle_tolerance: float = 0.05
    goal_position_indices: tuple[int, ...] = (0, 1)
    goal_angle_indices: tuple[int, ...] = (2,)
    timeout: float = 30.0
    replan: bool = True
    ee_bound: float = 0.1


@dataclass(frozen=True)
class DisturbanceConfig:
    slip: tuple[float, ...] = ()
    jump_magnitude: float = 0.0
    jump_rate: float = 0.0
    jump_channels: tuple[int, ...] = (0, 1)
    seed: int = 0


@dataclass(frozen=True)
class TaskConfig:
    name: str
    description: str = ""
    model: ModelConfig = ModelConfig()
    reference: Optional[ReferenceConfig] = None
    problem: ProblemConfig = ProblemConfig()
    cost: CostConfig = CostConfig()
    solver: SolverConfig = SolverConfig()
    mpc: Optional[MpcConfig] = None
    disturbance: Optional[DisturbanceConfig] = None

    # builders ---------------------------------------------------------------

    def build_model(self):
        m = self.model
        if m.type == "tracked":
            return TrackedBaseModel(d=m.d, b=m.b, nonholonomic=m.nonholonomic)
        if m.type == "manipulator":
            base = PlanarManipulatorModel(m.link_lengths, m.d, m.b, m.mount, "none", None, 0.0, m.nonholonomic)
            reference = self._reference(base) if m.ee_mode != "none" else None
            return PlanarManipulatorModel(m.link_lengths, m.d, m.b, m.mount, m.ee_mode, reference, m.ee_gain, m.nonholonomic)
        if m.type == "wheeled":
            mounts = np.reshape(m.mounts, (-1, 2))
            return WheeledLeggedModel(
                [tuple(r) for r in mounts], m.caster, m.leg_height, m.radius, m.constraint_frame
            )
        raise ConfigError(f"[model] type: unknown model type {m.type!r}")

    def _reference(self, arm: PlanarManipulatorModel):
        r = self.reference if self.reference is not None else ReferenceConfig()
        x0 = np.asarray(self.problem.x0, dtype=float)
        if r.kind == "hold":
            return hold_reference(arm, x0)
        origin = arm.ee_position(x0) if r.relative else np.zeros(2)

        def at(p):
            return tuple(float(v) for v in origin + np.asarray(p, dtype=float))

        if r.kind == "fixed":
            return FixedPoint(at(r.point))
        if r.kind == "line":
            return LineSegment(at(r.start), at(r.end), r.t_start, r.t_end)
        if r.kind == "circle":
            return Circle(at(r.center), r.radius, r.period, r.phase)
        if r.kind == "figure8":
            return FigureEight(at(r.center), r.size, r.period)
        raise ConfigError(f"[reference] kind: unknown reference kind {r.kind!r}")

    def build_cost(self) -> QuadraticCost:
        c = self.cost
        try:
            return QuadraticCost.diagonal(c.R, c.Qf, self.problem.x_r, c.Q if c.Q else None)
        except ValueError as exc:
            weight = re.search(r"cost weight (\w+)", str(exc))
            key = weight.group(1) if weight else "R"
            raise ConfigError(f"[cost] {key}: {exc}") from exc

    def solver_settings(self) -> SolverSettings:
        s = self.solver
        integ = IntegratorSettings(abs_tol=s.abs_tol, rel_tol=s.rel_tol, max_step=s.max_step)
        return SolverSettings(
            max_iterations=s.max_iterations,
            cost_rel_tol=s.cost_rel_tol,
            constraint_ise_tol=s.constraint_ise_tol,
            line_search=LineSearchSettings(
                alpha_min=s.alpha_min,
                reduction=s.reduction,
                merit_weight=s.merit_weight,
                merit_norm=s.merit_norm,
                adaptive_merit=s.adaptive_merit,
            ),
            forward=integ,
            backward=integ,
            divergence_bound=s.divergence_bound,
        )

    def mpc_settings(self) -> MpcSettings:
        if self.mpc is None:
            raise ConfigError(f"task {self.name!r} has no [mpc] section")
        values = dataclasses.asdict(self.mpc)
        values.pop("ee_bound")
        return MpcSettings(**values)

    def disturbance_settings(self, seed: Optional[int] = None) -> DisturbanceSettings:
        d = self.disturbance if self.disturbance is not None else DisturbanceConfig()
        values = dataclasses.asdict(d)
        if seed is not None:
            values["seed"] = int(seed)
        return DisturbanceSettings(**values)

    def validate(self) -> None:
        """Build every component once so that inconsistencies surface as :class:`ConfigError`."""
        try:
            model = self.build_model()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[model]: {exc}") from exc
        p, c = self.problem, self.cost
        for section, key, values, n in (
            ("problem", "x0", p.x0, model.n_x),
            ("problem", "x_r", p.x_r, model.n_x),
            ("cost", "R", c.R, model.n_u),
            ("cost", "Qf", c.Qf, model.n_x),
        ):
            if len(values) != n:
                raise ConfigError(f"[{section}] {key}: expected {n} values for this model, got {len(values)}")
        if c.Q and len(c.Q) != model.n_x:
            raise ConfigError(f"[cost] Q: expected {model.n_x} values for this model, got {len(c.Q)}")
        if p.horizon <= 0:
            raise ConfigError("[problem] horizon: must be positive")
        self.build_cost()
        for section, build in (("solver", self.solver_settings), ("mpc", self.mpc_settings if self.mpc else None)):
            if build is None:
                continue
            try:
                build()
            except ValueError as exc:
                raise ConfigError(f"[{section}]: {exc}") from exc
        if self.disturbance is not None:
            try:
                self.disturbance_settings()
            except ValueError as exc:
                raise ConfigError(f"[disturbance]: {exc}") from exc


_SECTIONS = {
    "model": ModelConfig,
    "reference": ReferenceConfig,
    "problem": ProblemConfig,
    "cost": CostConfig,
    "solver": SolverConfig,
    "mpc": MpcConfig,
    "disturbance": DisturbanceConfig,
}
_OPTIONAL = ("reference", "mpc", "disturbance")


def _line_of(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[(.+)\]$", stripped)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", stripped):
            return i
    return None


def _where(text, section, key=None) -> str:
    line = _line_of(text, section, key)
    loc = f"[{section}] {key}" if key else f"[{section}]"
    return f"line {line}: {loc}" if line else loc


def _parse_value(raw: str, kind):
    raw = raw.strip()
    origin = typing.get_origin(kind)
    if origin is tuple:
        inner = typing.get_args(kind)[0]
        if raw == "":
            return ()
        return tuple(inner(v.strip()) for v in raw.split(","))
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _section(cls, items: dict, text: str, section: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    values = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"{_where(text, section, key)}: unknown key (expected one of {', '.join(sorted(known))})")
        try:
            values[key] = _parse_value(raw, hints[key])
        except ValueError as exc:
            raise ConfigError(f"{_where(text, section, key)}: {exc}") from exc
    return cls(**values)


def parse(text: str) -> TaskConfig:
    """Parse configuration text; raises :class:`ConfigError` with a line/field diagnostic."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    unknown = [s for s in cp.sections() if s not in _SECTIONS and s != "task"]
    if unknown:
        raise ConfigError(f"{_where(text, unknown[0])}: unknown section")
    if not cp.has_section("task") or "name" not in cp["task"]:
        raise ConfigError("[task] name: missing task name")
    extra = set(cp["task"]) - {"name", "description"}
    if extra:
        raise ConfigError(f"{_where(text, 'task', sorted(extra)[0])}: unknown key")
    for required in ("problem", "cost"):
        if not cp.has_section(required):
            raise ConfigError(f"[{required}]: missing section")
    parts = {}
    for section, cls in _SECTIONS.items():
        if cp.has_section(section):
            parts[section] = _section(cls, dict(cp[section]), text, section)
        elif section not in _OPTIONAL:
            parts[section] = cls()
    for section, key in (("problem", "x0"), ("problem", "x_r"), ("cost", "R"), ("cost", "Qf")):
        if not getattr(parts[section], key):
            raise ConfigError(f"{_where(text, section)} {key}: required")
    cfg = TaskConfig(name=cp["task"]["name"].strip(), description=cp["task"].get("description", "").strip(), **parts)
    cfg.validate()
    return cfg


def serialize(cfg: TaskConfig) -> str:
    lines = ["[task]", f"name = {cfg.name}"]
    if cfg.description:
        lines.append(f"description = {cfg.description}")
    for section in _SECTIONS:
        part = getattr(cfg, section)
        if part is None:
            continue
        lines += ["", f"[{section}]"]
        for f in fields(part):
            lines.append(f"{f.name} = {_format_value(getattr(part, f.name))}".rstrip())
    return "\n".join(lines) + "\n"


def load(path) -> TaskConfig:
    """Load a task from a file path or a bundled task name (e.g. ``"tracked-base"``)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and str(path) in bundled_tasks():
        return parse(resources.files("cslq.tasks").joinpath(f"{path}.ini").read_text())
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse(text)


def bundled_tasks() -> list[str]:
    root = resources.files("cslq.tasks")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def with_horizon(cfg: TaskConfig, horizon: float) -> TaskConfig:
    return dataclasses.replace(cfg, problem=dataclasses.replace(cfg.problem, horizon=float(horizon)))
