from .references import Circle, EeReference, FigureEight, FixedPoint, LineSegment, make_reference
from .tracked import (
    PlanarManipulatorModel,
    TrackedBaseModel,
    ee_constraint,
    hold_reference,
    track_speeds,
    tracked_constraint,
    two_wheel_velocity,
)
from .linear import LinearSystemModel
from .wheeled import Leg, WheeledLeggedModel, euler_rates, rotation_zyx, wheel_contact_velocity

__all__ = [
    "Circle",
    "EeReference",
    "FigureEight",
    "FixedPoint",
    "Leg",
    "LinearSystemModel",
    "LineSegment",
    "PlanarManipulatorModel",
    "TrackedBaseModel",
    "WheeledLeggedModel",
    "ee_constraint",
    "euler_rates",
    "hold_reference",
    "make_reference",
    "rotation_zyx",
    "track_speeds",
    "tracked_constraint",
    "two_wheel_velocity",
    "wheel_contact_velocity",
]
