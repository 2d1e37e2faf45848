import math

import numpy as np
import pytest

from rocksim.dynamics import RobotState, upright_orientation
from rocksim.mathutil import quat_normalize, random_unit_quat
from rocksim.observation import (
    ANGVEL_UV_SCALE,
    ANGVEL_W_SCALE,
    FRAME_SIZE,
    IDX_ANGVEL_U,
    IDX_ANGVEL_V,
    IDX_ANGVEL_W,
    IDX_COMMAND_X,
    IDX_COMMAND_Y,
    IDX_LAST_ACTION,
    IDX_MOTOR_COS,
    IDX_MOTOR_SIN,
    IDX_MOTOR_VEL,
    IDX_PROJ_COS,
    IDX_PROJ_SIN,
    IDX_QUAT,
    MOTOR_VEL_SCALE,
    OBS_SIZE,
    ObservationBuilder,
    build_observation,
)

UNIT_X = np.array([1.0, 0.0])


def test_observation_length_and_stack_order():
    builder = ObservationBuilder()
    state = RobotState()
    obs = builder.build(state, UNIT_X, 0.0)
    assert obs.shape == (OBS_SIZE,)
    # at episode start the two past frames replicate the current one
    assert np.array_equal(obs[:FRAME_SIZE], obs[FRAME_SIZE : 2 * FRAME_SIZE])
    assert np.array_equal(obs[:FRAME_SIZE], obs[2 * FRAME_SIZE :])


def test_history_shifts_newest_first():
    builder = ObservationBuilder()
    state = RobotState()
    first = builder.build(state, UNIT_X, 0.25)[:FRAME_SIZE]
    second_full = builder.build(state, UNIT_X, 0.75)
    second = second_full[:FRAME_SIZE]
    assert second[IDX_LAST_ACTION] == 0.75
    assert np.array_equal(second_full[FRAME_SIZE : 2 * FRAME_SIZE], first)
    assert np.array_equal(second_full[2 * FRAME_SIZE :], first)
    third_full = builder.build(state, UNIT_X, -0.5)
    assert np.array_equal(third_full[FRAME_SIZE : 2 * FRAME_SIZE], second)
    assert np.array_equal(third_full[2 * FRAME_SIZE :], first)


def test_golden_layout_sentinels():
    builder = ObservationBuilder()
    q = quat_normalize(np.array([0.8, 0.4, -0.2, 0.4]))
    state = RobotState(
        orientation=q,
        angular_velocity=np.array([3.0, -6.0, 12.0]),
        pendulum_angle_unwrapped=math.pi / 6,
        pendulum_velocity=18.75,
    )
    obs = builder.build(state, np.array([0.6, 0.8]), 0.5)
    assert obs[IDX_LAST_ACTION] == 0.5
    assert obs[IDX_COMMAND_X] == pytest.approx(0.6)
    assert obs[IDX_COMMAND_Y] == pytest.approx(0.8)
    assert np.allclose(obs[IDX_QUAT], q)
    assert obs[IDX_ANGVEL_W] == pytest.approx(12.0 * ANGVEL_W_SCALE)  # 0.5
    assert obs[IDX_ANGVEL_U] == pytest.approx(3.0 * ANGVEL_UV_SCALE)  # 0.25
    assert obs[IDX_ANGVEL_V] == pytest.approx(-6.0 * ANGVEL_UV_SCALE)  # -0.5
    assert obs[IDX_MOTOR_VEL] == pytest.approx(18.75 * MOTOR_VEL_SCALE)  # 0.5
    assert obs[IDX_MOTOR_SIN] == pytest.approx(0.5)
    assert obs[IDX_MOTOR_COS] == pytest.approx(math.sqrt(3.0) / 2.0)


def test_projection_angle_entries_identity_frame():
    builder = ObservationBuilder()
    state = RobotState()  # identity orientation: u=x, v=y, w=z
    obs = builder.build(state, np.array([0.0, 1.0]), 0.0)
    assert obs[IDX_PROJ_SIN] == pytest.approx(1.0)
    assert obs[IDX_PROJ_COS] == pytest.approx(0.0, abs=1e-12)


def test_scale_spot_checks():
    builder = ObservationBuilder()
    state = RobotState(pendulum_velocity=37.5)
    obs = builder.build(state, UNIT_X, 0.0)
    assert obs[IDX_MOTOR_VEL] == 1.0

    builder.reset()
    state = RobotState(pendulum_velocity=75.0)
    obs = builder.build(state, UNIT_X, 0.0)
    assert obs[IDX_MOTOR_VEL] == 1.0  # clipped

    builder.reset()
    state = RobotState(angular_velocity=np.array([0.0, 0.0, -24.0]))
    obs = builder.build(state, UNIT_X, 0.0)
    assert obs[IDX_ANGVEL_W] == -1.0


def test_all_entries_bounded_random_states():
    rng = np.random.default_rng(21)
    builder = ObservationBuilder()
    for _ in range(2000):
        builder.reset()
        state = RobotState(
            position=rng.normal(size=3),
            orientation=random_unit_quat(rng),
            linear_velocity=rng.normal(scale=10.0, size=3),
            angular_velocity=rng.normal(scale=60.0, size=3),
            pendulum_angle_unwrapped=rng.normal(scale=10.0),
            pendulum_velocity=rng.normal(scale=100.0),
        )
        ang = rng.uniform(-math.pi, math.pi)
        cmd = np.array([math.cos(ang), math.sin(ang)])
        obs = builder.build(state, cmd, rng.uniform(-1, 1))
        assert obs.shape == (45,)
        assert np.all(obs >= -1.0) and np.all(obs <= 1.0)


def test_degenerate_projection_falls_back_to_previous():
    builder = ObservationBuilder()
    state = RobotState()  # w vertical, non-degenerate
    builder.build(state, np.array([0.0, 1.0]), 0.0)  # theta = pi/2
    # now a frame where any command along x is degenerate (w horizontal)
    state2 = RobotState(orientation=upright_orientation(0.0))
    obs = builder.build(state2, np.array([1.0, 0.0]), 0.0)
    assert obs[IDX_PROJ_SIN] == pytest.approx(1.0)  # held pi/2
    assert obs[IDX_PROJ_COS] == pytest.approx(0.0, abs=1e-12)


def test_heading_relative_command_mode():
    builder = ObservationBuilder(command_frame="heading")
    state = RobotState(orientation=upright_orientation(0.0))  # w = +y, heading = -x? check consistency
    obs_ahead = builder.build(state, np.array([-1.0, 0.0]), 0.0)
    builder.reset()
    obs_side = builder.build(state, np.array([0.0, 1.0]), 0.0)
    # the two commands land on orthogonal unit entries in heading frame
    a = np.array([obs_ahead[IDX_COMMAND_X], obs_ahead[IDX_COMMAND_Y]])
    b = np.array([obs_side[IDX_COMMAND_X], obs_side[IDX_COMMAND_Y]])
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert np.linalg.norm(b) == pytest.approx(1.0)
    assert abs(float(a @ b)) < 1e-12


def test_functional_wrapper():
    builder = ObservationBuilder()
    state = RobotState()
    direct = ObservationBuilder().build(state, UNIT_X, 0.0)
    wrapped = build_observation(state, UNIT_X, 0.0, builder)
    assert np.array_equal(direct, wrapped)


def test_reset_clears_history():
    builder = ObservationBuilder()
    state = RobotState()
    builder.build(state, UNIT_X, 0.9)
    builder.reset()
    obs = builder.build(state, UNIT_X, 0.1)
    assert np.array_equal(obs[:FRAME_SIZE], obs[FRAME_SIZE : 2 * FRAME_SIZE])
