"""Small quaternion / angle helpers shared across the simulator.

Quaternions are (w, x, y, z), unit norm, and rotate body-frame vectors into
the world frame.
"""

from __future__ import annotations

import math

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]; the boundary maps to +pi."""
    two_pi = 2.0 * math.pi
    wrapped = math.fmod(angle + math.pi, two_pi)
    if wrapped <= 0.0:
        wrapped += two_pi
    return wrapped - math.pi


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2))
    if n == 0.0:
        return IDENTITY_QUAT.copy()
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(axis))
    if n == 0.0:
        return IDENTITY_QUAT.copy()
    half = 0.5 * angle
    s = math.sin(half) / n
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(v))
    if angle < 1e-12:
        # second-order small-angle expansion keeps the map smooth near zero
        return quat_normalize(np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]]))
    return quat_from_axis_angle(v, angle)


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix (body -> world) of a unit quaternion."""
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def quat_integrate_body(q: np.ndarray, omega_body: np.ndarray, dt: float) -> np.ndarray:
    """Advance orientation by a body-frame angular velocity held for dt (exact map)."""
    dq = quat_from_rotvec(omega_body * dt)
    return quat_normalize(quat_mul(q, dq))


def random_unit_quat(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return quat_normalize(q)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def orthonormal_tangents(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic right-handed (a1, a2) completing `axis` to an orthonormal triad."""
    axis = np.asarray(axis, dtype=float)
    seed = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    a1 = seed - axis * float(seed @ axis)
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(axis, a1)
    return a1, a2
