import csv
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cslq import QuadraticCost, TimeVaryingController
from cslq.models import LinearSystemModel, PlanarManipulatorModel, TrackedBaseModel
from cslq.mpc import (
    ControllerSlot,
    DisturbanceSettings,
    EpisodeLog,
    MpcSettings,
    PlantSimulation,
    goal_reached,
    inner_loop_tick,
    mpc_step,
    no_replan_baseline,
    plant_input,
    run_episode,
    terminal_position_error,
)
from cslq.system import feasible_input

angle = st.floats(-np.pi, np.pi)
small = st.floats(-2, 2)
seeds = st.integers(0, 2**32 - 1)


def constant_controller(value, n_x, t0=0.0, tf=1.0):
    ff = np.tile(np.asarray(value, dtype=float), (2, 1))
    return TimeVaryingController([t0, tf], ff, np.zeros((2, ff.shape[1], n_x)))


def test_controller_slot_swaps_whole_snapshots_under_threads():
    slot = ControllerSlot(constant_controller([0.0], 1))
    stop = threading.Event()
    mixed = []

    def reader():
        while not stop.is_set():
            ctrl, version = slot.snapshot()
            u = ctrl(np.zeros(1), 0.5)
            # every published controller is constant, so both ends must agree
            if ctrl(np.zeros(1), 0.0)[0] != u[0]:
                mixed.append(version)

    threads = [threading.Thread(target=reader) for _ in range(3)]
    for th in threads:
        th.start()
    for k in range(1, 500):
        slot.publish(constant_controller([float(k)], 1))
    stop.set()
    for th in threads:
        th.join()
    ctrl, version = slot.snapshot()
    assert not mixed
    assert version == 500 and ctrl(np.zeros(1), 0.0)[0] == 499.0
    assert ControllerSlot().snapshot() == (None, 0)


@given(angle, small, small, small)
def test_plant_input_maps_to_track_speeds(theta, v, w, arm):
    model = TrackedBaseModel(b=0.6)
    x = np.array([0.1, -0.2, theta])
    u = np.array([v * np.cos(theta), v * np.sin(theta), w])
    v_r, v_l = plant_input(model, x, u)
    assert (v_r + v_l) / 2 == pytest.approx(v, abs=1e-12)
    assert (v_r - v_l) / (2 * model.b) == pytest.approx(w, abs=1e-12)
    lin = LinearSystemModel(np.zeros((2, 2)), np.eye(2))
    np.testing.assert_array_equal(plant_input(lin, np.zeros(2), [v, arm]), [v, arm])


@given(seeds)
def test_unit_slip_reproduces_the_model_flow(seed):
    rng = np.random.default_rng(seed)
    model = TrackedBaseModel()
    plant = PlantSimulation(model, np.zeros(3), DisturbanceSettings(slip=(1.0, 1.0)))
    x = rng.normal(size=3)
    u = feasible_input(model, x, rng.normal(size=3))
    np.testing.assert_allclose(plant.velocity(x, plant_input(model, x, u)), model.flow(x, u, 0.0), atol=1e-12)


def test_left_track_slip_turns_the_robot_left():
    model = TrackedBaseModel()
    plant = PlantSimulation(model, np.zeros(3), DisturbanceSettings(slip=(1.0, 0.8)))
    plant.advance(np.array([1.0, 1.0]), 1.0)
    # b is the half-width: omega = (v_r - v_l) / (2 b)
    assert plant.x[2] == pytest.approx(0.2 / (2 * model.b), rel=1e-9)
    assert plant.x[1] > 0
    with pytest.raises(ValueError):
        DisturbanceSettings(slip=(-0.1,))


def test_estimator_holds_samples_at_its_rate():
    model = LinearSystemModel(np.zeros((1, 1)), np.ones((1, 1)))
    plant = PlantSimulation(model, [0.0], estimator_rate=20.0)
    seen = []
    for k in range(25):
        t = k / 250.0
        seen.append(plant.sample(t)[0])
        plant.advance(np.array([1.0]), 1 / 250.0)
    # refreshed at t = 0 and t = 0.05 (tick 12.5 rounds up to tick 13)
    assert seen[:13] == [0.0] * 13
    assert seen[13] == pytest.approx(13 / 250.0) and len(set(seen[13:])) == 1


def test_seeded_estimate_jumps_are_reproducible():
    model = LinearSystemModel(np.zeros((2, 2)), np.eye(2))
    dist = DisturbanceSettings(jump_magnitude=0.1, jump_rate=5.0, jump_channels=(1,), seed=7)

    def trace(d):
        plant = PlantSimulation(model, np.zeros(2), d)
        return np.array([plant.sample(k / 20.0).copy() for k in range(200)])

    a, b = trace(dist), trace(dist)
    np.testing.assert_array_equal(a, b)
    assert np.all(a[:, 0] == 0) and 0 < np.count_nonzero(a[:, 1]) < 200
    assert not np.array_equal(a, trace(DisturbanceSettings(jump_magnitude=0.1, jump_rate=5.0, jump_channels=(1,), seed=8)))


def test_disturbance_and_mpc_settings_validation():
    for bad in (dict(jump_magnitude=-1.0), dict(jump_rate=np.inf), dict(slip=(np.nan,))):
        with pytest.raises(ValueError):
            DisturbanceSettings(**bad)
    for bad in (dict(horizon=0.0), dict(inner_rate=5.0), dict(warm_iterations=0), dict(goal_tolerance=0.0)):
        with pytest.raises(ValueError):
            MpcSettings(**bad)


def test_goal_check_wraps_angles():
    s = MpcSettings(goal_tolerance=0.01, goal_angle_tolerance=0.05)
    assert goal_reached([1.0, 0.0, np.pi - 0.01], [1.0, 0.005, -np.pi + 0.01], s)
    assert not goal_reached([1.0, 0.0, 0.1], [1.0, 0.0, 0.0], s)
    assert not goal_reached([1.02, 0.0, 0.0], [1.0, 0.0, 0.0], s)


def test_no_replan_baseline_ends_with_the_plan():
    s = MpcSettings(horizon=5.0, timeout=40.0)
    b = no_replan_baseline(s)
    assert not b.replan and b.timeout == 5.0 and b.horizon == 5.0
    assert no_replan_baseline(MpcSettings(horizon=5.0, timeout=2.0)).timeout == 2.0


def _tracked():
    cost = QuadraticCost.diagonal([1, 1, 1], [300, 300, 300], [1.0, 0.0, 0.0])
    return TrackedBaseModel(), cost


def test_mpc_step_warm_start_and_failure():
    model, cost = _tracked()
    s = MpcSettings(horizon=3.0)
    cold, report, err = mpc_step(model, cost, np.zeros(3), 0.0, None, s)
    assert err is None and report.converged
    warm, report, err = mpc_step(model, cost, np.array([0.05, 0.0, 0.0]), 0.2, cold, s)
    assert err is None and report.iterations <= s.warm_iterations
    assert warm.grid.t0 == pytest.approx(0.2) and warm.grid.tf == pytest.approx(3.2)
    same, report, err = mpc_step(model, cost, np.full(3, np.nan), 0.4, warm, s)
    assert same is warm and report is None and err


def test_robot_at_the_goal_stays_put():
    model, cost = _tracked()
    goal = np.array([1.0, 0.0, 0.0])
    ctrl, report, _ = mpc_step(model, cost, goal, 0.0, None, MpcSettings(horizon=3.0))
    for t in np.linspace(0.0, 3.0, 13):
        u, p = inner_loop_tick(model, ctrl, goal, t)
        assert np.max(np.abs(u)) < 1e-6 and np.max(np.abs(p)) < 1e-6


def test_virtual_episode_is_deterministic_and_logs_everything(tmp_path):
    model, cost = _tracked()
    s = MpcSettings(horizon=3.0, outer_rate=5.0, timeout=2.0)
    a = run_episode(model, cost, np.zeros(3), [1.0, 0.0, 0.0], s, DisturbanceSettings(slip=(1.0, 0.9)))
    b = run_episode(model, cost, np.zeros(3), [1.0, 0.0, 0.0], s, DisturbanceSettings(slip=(1.0, 0.9)))
    assert a.ticks == b.ticks
    # on a 3 s plan the base has covered about half the distance after 2 s
    assert not a.diverged and terminal_position_error(a, [1, 0, 0]) < 0.6
    assert a.replans[0].t == 0.0 and not a.replans[0].warm and all(r.warm for r in a.replans[1:])
    np.testing.assert_allclose(np.diff([r.t for r in a.replans]), 0.2)
    a.write_csv(tmp_path)
    with open(tmp_path / "ticks.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x0", "x1", "x2", "xhat0", "xhat1", "xhat2", "p0", "p1"]
    assert len(rows) == len(a.ticks) + 1
    with open(tmp_path / "replans.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "iterations", "cost", "ise", "converged", "warm", "failed"]
    assert (tmp_path / "replan_timing.csv").exists()


def test_episode_log_columns():
    log_ = EpisodeLog((2, 2, 2), ticks=[[0.0, 1, 2, 3, 4, 5, 6]])
    np.testing.assert_array_equal(log_.column("true"), [[1, 2]])
    np.testing.assert_array_equal(log_.column("estimate"), [[3, 4]])
    np.testing.assert_array_equal(log_.column("input"), [[5, 6]])


def test_threaded_mode_runs_the_same_loops():
    model, cost = _tracked()
    s = MpcSettings(horizon=1.0, outer_rate=5.0, timeout=0.3)
    log_ = run_episode(model, cost, np.zeros(3), [1.0, 0.0, 0.0], s, mode="threaded")
    assert len(log_.ticks) > 10 and log_.replans and log_.tick_jitter
    assert log_.final_time == pytest.approx(0.3, abs=0.01)
    with pytest.raises(ValueError, match="mode"):
        run_episode(model, cost, np.zeros(3), [1.0, 0.0, 0.0], s, mode="async")


def test_arm_rates_follow_the_track_speeds():
    arm = PlanarManipulatorModel()
    x = np.zeros(6)
    u = np.array([1.0, 0.0, 0.5, 0.1, 0.2, 0.3])
    p = plant_input(arm, x, u)
    assert p.size == 5
    np.testing.assert_array_equal(p[2:], u[3:])
    np.testing.assert_allclose(PlantSimulation(arm, x).velocity(x, p), arm.flow(x, u, 0.0), atol=1e-12)
