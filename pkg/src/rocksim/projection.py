"""Analytic pendulum-placement controller.

Given the motor frame (u, v, w) in world coordinates and a commanded ground
direction d, pick the pendulum angle theta whose center-of-mass offset
p(theta) = arm * (cos(theta) u + sin(theta) v) projects onto the ground plane
along +d, then track theta with a PD law on the motor velocity setpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mathutil import quat_to_mat, wrap_angle

MAX_SETPOINT = 21.0  # rad/s, actuator interface limit
DEGENERATE_EPS = 1e-9


class DegenerateCommandError(ValueError):
    """Commanded direction is unreachable: the pendulum plane projects to a
    ground line orthogonal to the command."""


@dataclass(frozen=True)
class MotorFrame:
    """Right-handed orthonormal (u, v, w) in world coordinates, w along the
    motor axis."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        for a, b in ((self.u, self.v), (self.v, self.w), (self.u, self.w)):
            if abs(float(a @ b)) > 1e-9:
                raise ValueError("motor frame axes must be orthogonal")
        if np.linalg.norm(np.cross(self.u, self.v) - self.w) > 1e-9:
            raise ValueError("motor frame must be right-handed (u x v = w)")

    @classmethod
    def from_quat(cls, q: np.ndarray) -> "MotorFrame":
        rot = quat_to_mat(q)
        return cls(u=rot[:, 0], v=rot[:, 1], w=rot[:, 2])


@dataclass(frozen=True)
class Command:
    """Unit direction in the ground plane."""

    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if abs(float(np.hypot(d[0], d[1])) - 1.0) > 1e-9:
            raise ValueError("command must be a unit 2-vector")
        object.__setattr__(self, "d", d)


def target_angle(frame: MotorFrame, cmd: Command) -> float:
    """Pendulum angle whose ground projection points along the command.

    Wrapped to (-pi, pi]. Raises DegenerateCommandError when the command is
    orthogonal to the reachable projection line; callers hold the previous
    target in that case.
    """
    u, v, w = frame.u, frame.v, frame.w
    dx, dy = float(cmd.d[0]), float(cmd.d[1])
    a = u[0] * dy - u[1] * dx
    b = v[1] * dx - v[0] * dy
    if abs(a) < DEGENERATE_EPS and abs(b) < DEGENERATE_EPS:
        raise DegenerateCommandError("command unreachable from current motor frame")
    theta = math.atan2(a, b)
    if w[2] < 0.0:
        theta += math.pi
    return wrap_angle(theta)


def pendulum_vector(frame: MotorFrame, theta: float, arm: float) -> np.ndarray:
    """Pendulum center-of-mass displacement from the system centroid, world
    frame; always perpendicular to w with |p| = arm."""
    return arm * (math.cos(theta) * frame.u + math.sin(theta) * frame.v)


def project_to_ground(p: np.ndarray) -> np.ndarray:
    """Horizontal part of a world vector: (p_x, p_y)."""
    return np.array([p[0], p[1]], dtype=float)


def pd_track(theta_target: float, theta_p: float, pendulum_velocity: float,
             kp: float = 20.0, kd: float = 0.5) -> float:
    """Velocity setpoint tracking the target angle, clamped to the actuator
    interface limit. The angle error is wrapped to (-pi, pi]."""
    error = wrap_angle(theta_target - theta_p)
    setpoint = kp * error - kd * pendulum_velocity
    return max(-MAX_SETPOINT, min(MAX_SETPOINT, setpoint))


class ProjectionController:
    """Stateful wrapper: computes targets, holding the last one across
    degenerate commands."""

    def __init__(self, kp: float = 20.0, kd: float = 0.5, initial_target: float = 0.0):
        self.kp = kp
        self.kd = kd
        self.last_target = initial_target

    def setpoint(self, frame: MotorFrame, cmd: Command | None,
                 theta_p: float, pendulum_velocity: float) -> float:
        if cmd is not None:
            try:
                self.last_target = target_angle(frame, cmd)
            except DegenerateCommandError:
                pass
        return pd_track(self.last_target, theta_p, pendulum_velocity, self.kp, self.kd)
