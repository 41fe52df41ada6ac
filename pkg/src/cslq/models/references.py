"""End-effector reference paths with continuous first derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EeReference:
    def position(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def velocity(self, t: float) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class FixedPoint(EeReference):
    point: tuple

    def position(self, t):
        return np.asarray(self.point, dtype=float)

    def velocity(self, t):
        return np.zeros(len(self.point))


@dataclass(frozen=True)
class LineSegment(EeReference):
    """Straight segment ``start -> end`` over ``[t_start, t_end]`` with a smoothstep time law."""

    start: tuple
    end: tuple
    t_start: float
    t_end: float

    def _phase(self, t):
        span = self.t_end - self.t_start
        tau = min(max((t - self.t_start) / span, 0.0), 1.0)
        return 3 * tau**2 - 2 * tau**3, (6 * tau - 6 * tau**2) / span

    def position(self, t):
        s, _ = self._phase(t)
        a, b = np.asarray(self.start, float), np.asarray(self.end, float)
        return a + s * (b - a)

    def velocity(self, t):
        _, ds = self._phase(t)
        return ds * (np.asarray(self.end, float) - np.asarray(self.start, float))


@dataclass(frozen=True)
class Circle(EeReference):
    center: tuple
    radius: float
    period: float
    phase: float = 0.0

    def position(self, t):
        a = 2 * np.pi * t / self.period + self.phase
        return np.asarray(self.center, float) + self.radius * np.array([np.cos(a), np.sin(a)])

    def velocity(self, t):
        w = 2 * np.pi / self.period
        a = w * t + self.phase
        return self.radius * w * np.array([-np.sin(a), np.cos(a)])


@dataclass(frozen=True)
class FigureEight(EeReference):
    """Lemniscate of Gerono starting at ``center``: ``(a sin wt, a sin wt cos wt)``."""

    center: tuple
    size: float
    period: float

    def position(self, t):
        w = 2 * np.pi / self.period
        s, c = np.sin(w * t), np.cos(w * t)
        return np.asarray(self.center, float) + self.size * np.array([s, s * c])

    def velocity(self, t):
        w = 2 * np.pi / self.period
        return self.size * w * np.array([np.cos(w * t), np.cos(2 * w * t)])


def make_reference(kind: str, **params) -> EeReference:
    kinds = {"fixed": FixedPoint, "line": LineSegment, "circle": Circle, "figure8": FigureEight}
    if kind not in kinds:
        raise ValueError(f"unknown reference kind {kind!r}; choose from {sorted(kinds)}")
    return kinds[kind](**params)
