"""Policy observation vector: scaling, clipping, and 3-frame stacking.

One frame is 15 entries in a frozen order; the policy input stacks the
current frame with the two previous ones, newest first, for 45 entries total.
Every entry is scaled to a nominal [-1, 1] range and clipped.

Frame layout (index: content):
     0  last action
   1-2  command direction d_x, d_y (world frame by default)
   3-6  body orientation quaternion (w, x, y, z)
     7  body angular velocity about w, scaled by 1/24 per rad/s
   8-9  body angular velocity about u and v, scaled by 1/12 per rad/s
    10  motor (pendulum joint) angular velocity, scaled by 1/37.5 per rad/s
 11-12  sin, cos of the motor angle
 13-14  sin, cos of the projection target angle
"""

from __future__ import annotations

import math

import numpy as np

from .dynamics import RobotState
from .projection import Command, DegenerateCommandError, MotorFrame, target_angle

FRAME_SIZE = 15
STACK_FRAMES = 3
OBS_SIZE = FRAME_SIZE * STACK_FRAMES

IDX_LAST_ACTION = 0
IDX_COMMAND_X = 1
IDX_COMMAND_Y = 2
IDX_QUAT = slice(3, 7)
IDX_ANGVEL_W = 7
IDX_ANGVEL_U = 8
IDX_ANGVEL_V = 9
IDX_MOTOR_VEL = 10
IDX_MOTOR_SIN = 11
IDX_MOTOR_COS = 12
IDX_PROJ_SIN = 13
IDX_PROJ_COS = 14

ANGVEL_W_SCALE = 1.0 / 24.0
ANGVEL_UV_SCALE = 1.0 / 12.0
MOTOR_VEL_SCALE = 1.0 / 37.5


class ObservationBuilder:
    """Owns the frame history and the projection-angle fallback for one
    environment instance; not shared across environments."""

    def __init__(self, command_frame: str = "world"):
        if command_frame not in ("world", "heading"):
            raise ValueError("command_frame must be 'world' or 'heading'")
        self.command_frame = command_frame
        self._history: list[np.ndarray] = []
        self._last_theta = 0.0

    def reset(self) -> None:
        self._history.clear()
        self._last_theta = 0.0

    def _command_entries(self, frame: MotorFrame, d: np.ndarray) -> tuple[float, float]:
        if self.command_frame == "world":
            return float(d[0]), float(d[1])
        # heading-relative: express d in the frame of the horizontal rolling
        # direction; falls back to world axes when the motor axis is vertical
        heading = np.array([-frame.w[1], frame.w[0]])
        norm = float(np.hypot(heading[0], heading[1]))
        if norm < 1e-6:
            return float(d[0]), float(d[1])
        heading /= norm
        along = float(d @ heading)
        across = float(d[0] * -heading[1] + d[1] * heading[0])
        return along, across

    def build(self, state: RobotState, command: np.ndarray, last_action: float) -> np.ndarray:
        """Assemble the stacked observation for the current control step."""
        frame = MotorFrame.from_quat(state.orientation)
        try:
            theta = target_angle(frame, Command(np.asarray(command, dtype=float)))
            self._last_theta = theta
        except DegenerateCommandError:
            theta = self._last_theta

        omega = state.angular_velocity  # body components are the u, v, w parts
        raw = np.empty(FRAME_SIZE)
        raw[IDX_LAST_ACTION] = last_action
        raw[IDX_COMMAND_X], raw[IDX_COMMAND_Y] = self._command_entries(frame, command)
        raw[IDX_QUAT] = state.orientation
        raw[IDX_ANGVEL_W] = omega[2] * ANGVEL_W_SCALE
        raw[IDX_ANGVEL_U] = omega[0] * ANGVEL_UV_SCALE
        raw[IDX_ANGVEL_V] = omega[1] * ANGVEL_UV_SCALE
        raw[IDX_MOTOR_VEL] = state.pendulum_velocity * MOTOR_VEL_SCALE
        raw[IDX_MOTOR_SIN] = math.sin(state.pendulum_angle)
        raw[IDX_MOTOR_COS] = math.cos(state.pendulum_angle)
        raw[IDX_PROJ_SIN] = math.sin(theta)
        raw[IDX_PROJ_COS] = math.cos(theta)
        current = np.clip(raw, -1.0, 1.0)

        if not self._history:
            # episode start: the two past frames replicate the first one
            self._history = [current.copy(), current.copy()]
        stacked = np.concatenate([current, self._history[0], self._history[1]])
        self._history = [current, self._history[0]]
        return stacked


def build_observation(
    state: RobotState, command: np.ndarray, last_action: float, history: ObservationBuilder
) -> np.ndarray:
    """Functional form of ObservationBuilder.build."""
    return history.build(state, command, last_action)
