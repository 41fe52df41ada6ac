import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cslq import linearize, verify_derivatives
from cslq.models import (
    Circle,
    FigureEight,
    FixedPoint,
    LinearSystemModel,
    LineSegment,
    PlanarManipulatorModel,
    TrackedBaseModel,
    WheeledLeggedModel,
    euler_rates,
    hold_reference,
    make_reference,
    rotation_zyx,
    track_speeds,
    tracked_constraint,
    two_wheel_velocity,
)
from cslq.models.wheeled import rotation_zyx_derivatives
from cslq.system import DerivativeError, SystemModel, feasible_input, finite_difference_jacobian

angle = st.floats(-np.pi, np.pi)
small = st.floats(-2, 2)
seeds = st.integers(0, 2**32 - 1)


def _fd(f, x, eps=1e-6):
    return finite_difference_jacobian(f, x, eps)


# tracked base ------------------------------------------------------------------


@given(angle, small, small, st.floats(0.1, 1.0), st.floats(-0.5, 0.5))
def test_two_wheel_motion_satisfies_the_nonholonomic_row(theta, v_r, v_l, b, d):
    xdot = two_wheel_velocity(theta, v_r, v_l, b, d)
    x = np.array([0.3, -0.2, theta])
    assert tracked_constraint(x, xdot, d)[0] == pytest.approx(0.0, abs=1e-12)


@given(angle, small, small, st.floats(0.1, 1.0))
def test_track_speeds_invert_two_wheel_velocity(theta, v_r, v_l, b):
    xdot = two_wheel_velocity(theta, v_r, v_l, b)
    np.testing.assert_allclose(track_speeds(np.array([0, 0, theta]), xdot, b), (v_r, v_l), atol=1e-12)


@given(seeds)
def test_feasible_input_lands_on_the_constraint(seed):
    rng = np.random.default_rng(seed)
    model = TrackedBaseModel(d=0.3)
    x = rng.normal(size=3)
    u = feasible_input(model, x, rng.normal(size=3))
    assert abs(model.g1(x, u, 0.0)[0]) < 1e-12


def test_tracked_model_validation():
    with pytest.raises(ValueError):
        TrackedBaseModel(b=0.0)
    free = TrackedBaseModel(nonholonomic=False)
    assert free.m1 == 0 and free.g1(np.zeros(3), np.ones(3), 0).size == 0


# manipulator -------------------------------------------------------------------


def test_straight_arm_reaches_full_length():
    arm = PlanarManipulatorModel(link_lengths=(1.0, 0.8, 0.5), mount=(0.2, 0.0))
    q = np.array([1.0, 2.0, np.pi / 2, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(arm.ee_position(q), [1.0, 2.0 + 0.2 + 2.3], atol=1e-12)
    assert np.linalg.svd(arm.arm_jacobian(q), compute_uv=False)[-1] < 1e-12


@given(arrays(float, 6, elements=st.floats(-3, 3)))
def test_ee_jacobian_matches_finite_differences(q):
    arm = PlanarManipulatorModel(mount=(0.3, -0.1))
    np.testing.assert_allclose(arm.ee_jacobian(q), _fd(arm.ee_position, q), atol=1e-7)


@given(seeds, st.sampled_from(["position", "velocity"]))
def test_manipulator_derivatives(seed, mode):
    rng = np.random.default_rng(seed)
    ref = FigureEight((1.0, 0.0), 0.5, 5.0)
    arm = PlanarManipulatorModel(d=0.1, ee_mode=mode, reference=ref, ee_gain=1.5)
    x, t = rng.uniform(-2, 2, 6), float(rng.uniform(0, 5))
    u = feasible_input(arm, x, rng.normal(size=6), t)
    assert np.max(np.abs(arm.g1(x, u, t))) < 1e-9
    assert verify_derivatives(arm, [(x, u, t)]).passed


@given(arrays(float, 6, elements=st.floats(-2, 2)), arrays(float, 6, elements=st.floats(-2, 2)), st.floats(0, 5))
def test_velocity_row_is_the_time_derivative_of_the_position_error(q, qdot, t):
    ref = Circle((0.5, 0.5), 0.4, 3.0)
    pos = PlanarManipulatorModel(ee_mode="position", reference=ref)
    vel = PlanarManipulatorModel(ee_mode="velocity", reference=ref, ee_gain=0.0)
    h = 1e-6
    ddt = (pos.g2(q + h * qdot, t + h) - pos.g2(q - h * qdot, t - h)) / (2 * h)
    np.testing.assert_allclose(vel.g1(q, qdot, t)[1:], ddt, atol=1e-6)


def test_hold_reference_and_validation():
    arm = PlanarManipulatorModel()
    q = np.array([0, 0, 0, 0.4, 0.6, 0.6])
    ref = hold_reference(arm, q)
    np.testing.assert_allclose(ref.position(3.0), arm.ee_position(q))
    held = arm.with_reference(ref)
    assert held.reference is ref
    with pytest.raises(ValueError, match="reference"):
        PlanarManipulatorModel(ee_mode="velocity")
    with pytest.raises(ValueError, match="ee_mode"):
        PlanarManipulatorModel(ee_mode="orientation", reference=ref)


# references --------------------------------------------------------------------


@pytest.mark.parametrize(
    "ref",
    [
        FixedPoint((1.0, 2.0)),
        LineSegment((0.0, 0.0), (1.0, 2.0), 0.5, 3.0),
        Circle((0.0, 1.0), 0.7, 4.0, 0.3),
        FigureEight((1.0, -1.0), 0.8, 6.0),
    ],
)
@given(t=st.floats(-1, 8))
def test_reference_velocity_is_the_derivative(ref, t):
    h = 1e-6
    np.testing.assert_allclose(ref.velocity(t), (ref.position(t + h) - ref.position(t - h)) / (2 * h), atol=1e-6)


def test_line_segment_endpoints_and_factory():
    seg = make_reference("line", start=(0.0, 0.0), end=(2.0, 0.0), t_start=1.0, t_end=2.0)
    np.testing.assert_allclose(seg.position(0.0), [0, 0])
    np.testing.assert_allclose(seg.position(5.0), [2, 0])
    np.testing.assert_allclose(seg.velocity(1.0), [0, 0])
    with pytest.raises(ValueError, match="unknown reference"):
        make_reference("spiral")


# wheeled-legged ----------------------------------------------------------------


@given(angle, st.floats(-1.4, 1.4), angle)
def test_rotation_is_orthonormal_and_derivatives_match(yaw, pitch, roll):
    R = rotation_zyx(yaw, pitch, roll)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    h = 1e-6
    for k, dR in enumerate(rotation_zyx_derivatives(yaw, pitch, roll)):
        e = np.zeros(3)
        e[k] = h
        a = np.array([yaw, pitch, roll])
        np.testing.assert_allclose(dR, (rotation_zyx(*(a + e)) - rotation_zyx(*(a - e))) / (2 * h), atol=1e-8)


@given(angle, st.floats(-1.3, 1.3), angle, arrays(float, 3, elements=small))
def test_euler_rates_reproduce_body_angular_velocity(yaw, pitch, roll, omega):
    a = np.array([yaw, pitch, roll])
    rates = euler_rates(a, omega)
    R = rotation_zyx(*a)
    Rdot = sum(r * d for r, d in zip(rates, rotation_zyx_derivatives(*a)))
    W = R.T @ Rdot
    np.testing.assert_allclose([W[2, 1], W[0, 2], W[1, 0]], omega, atol=1e-9)
    np.testing.assert_allclose(W, -W.T, atol=1e-9)


def test_pitch_singularity_is_rejected():
    with pytest.raises(ValueError, match="singularity"):
        euler_rates(np.array([0.0, np.pi / 2, 0.0]), np.ones(3))


@given(st.floats(-1, 1), st.floats(-np.pi, np.pi))
def test_straight_rolling_satisfies_every_wheel_row(v, yaw):
    model = WheeledLeggedModel()
    x = np.zeros(14)
    x[3] = yaw
    u = np.zeros(14)
    u[3] = v  # forward in the base frame, wheels straight
    u[10:14] = v / model.radius
    assert np.max(np.abs(model.g1(x, u, 0.0))) < 1e-12


@given(seeds, st.sampled_from(["world", "base"]))
def test_wheeled_derivatives_and_rank(seed, frame):
    rng = np.random.default_rng(seed)
    model = WheeledLeggedModel(constraint_frame=frame)
    x = rng.uniform(-0.5, 0.5, 14)
    u = feasible_input(model, x, rng.normal(size=14))
    assert np.max(np.abs(model.g1(x, u, 0.0))) < 1e-9
    assert verify_derivatives(model, [(x, u, 0.0)]).passed
    _, D = model.g1_jacobians(x, u, 0.0)
    # four vertical rows share the same two base rates: one redundancy
    assert np.linalg.matrix_rank(D, tol=1e-9) == 11


@given(seeds)
def test_base_frame_rows_are_a_rotation_of_world_rows(seed):
    rng = np.random.default_rng(seed)
    x, u = rng.uniform(-0.5, 0.5, 14), rng.normal(size=14)
    world = WheeledLeggedModel().g1(x, u, 0).reshape(4, 3)
    base = WheeledLeggedModel(constraint_frame="base").g1(x, u, 0).reshape(4, 3)
    np.testing.assert_allclose(world, base @ rotation_zyx(*x[3:6]).T, atol=1e-12)


def test_wheeled_validation():
    with pytest.raises(ValueError):
        WheeledLeggedModel(radius=0.0)
    with pytest.raises(ValueError):
        WheeledLeggedModel(mounts=[(0, 0)])
    with pytest.raises(ValueError):
        WheeledLeggedModel(constraint_frame="leg")


# generic system plumbing ---------------------------------------------------------


def test_linearize_checks_shapes_and_finiteness():
    model = LinearSystemModel(np.eye(2), np.ones((2, 1)))
    with pytest.raises(ValueError, match="expected"):
        linearize(model, np.zeros(3), np.zeros(1), 0.0)
    with pytest.raises(ValueError, match="provider"):
        linearize(model, np.zeros(2), np.zeros(1), 0.0, "symbolic")

    class Bad(LinearSystemModel):
        def flow_jacobians(self, x, u, t):
            return np.full((2, 2), np.nan), self.B

    with pytest.raises(DerivativeError, match="f/dx"):
        linearize(Bad(np.eye(2), np.ones((2, 1))), np.zeros(2), np.zeros(1), 0.0)


def test_derivative_check_catches_a_wrong_jacobian():
    class Wrong(TrackedBaseModel):
        def g1_jacobians(self, x, u, t):
            C, D = super().g1_jacobians(x, u, t)
            return 1.01 * C, D

    x, u = np.array([0.0, 0.0, 0.7]), np.array([1.0, 0.5, 0.2])
    report = verify_derivatives(Wrong(), [(x, u, 0.0)])
    assert not report.passed and report.failures == ["g1/dx"]
    assert "FAIL" in str(report)


def test_finite_difference_fallback():
    class Pendulum(SystemModel):
        def __init__(self):
            super().__init__(2, 1)

        def flow(self, x, u, t):
            return np.array([x[1], -np.sin(x[0]) + u[0]])

    A, B = Pendulum().flow_jacobians(np.array([0.3, 0.0]), np.zeros(1), 0.0)
    np.testing.assert_allclose(A, [[0, 1], [-np.cos(0.3), 0]], atol=1e-8)
    np.testing.assert_allclose(B, [[0], [1]], atol=1e-8)
    with pytest.raises(ValueError, match="exceed"):
        SystemModel(2, 1, m1=2)
