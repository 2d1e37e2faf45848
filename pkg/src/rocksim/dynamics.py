"""Coupled shell + pendulum rigid-body dynamics with penalty ground contact.

The robot is one free rigid body (the shell, thin uniform surface) plus a
point-mass pendulum on a rigid massless arm rotating about the body z axis
(the motor axis). The pendulum is a reduced joint coordinate, so the system
has 7 generalized velocities: world linear velocity of the body origin, body
angular velocity, and the joint rate. Each step assembles the 7x7 articulated
mass matrix and solves for accelerations, then integrates with semi-implicit
Euler (velocities first, then positions with the new velocities).

Contact is a single penalty spring-damper at the deepest surface point with
regularized Coulomb friction. The deepest point comes from scanning a
precomputed direction fan over the lower hemisphere and refining the best
candidate with a shrinking local grid search on the radial law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import ShellModel, mass_properties
from .mathutil import quat_integrate_body, quat_normalize, quat_to_mat, skew, wrap_angle
from .terrain import Terrain

GRAVITY = 9.81


class SimulationDivergedError(RuntimeError):
    def __init__(self, step_index: int):
        super().__init__(f"non-finite state at physics step {step_index}")
        self.step_index = step_index


@dataclass
class RobotState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))  # body frame
    pendulum_angle_unwrapped: float = 0.0
    pendulum_velocity: float = 0.0
    time: float = 0.0

    @property
    def pendulum_angle(self) -> float:
        """Joint angle wrapped to (-pi, pi]; the unwrapped accumulator stays
        available as pendulum_angle_unwrapped."""
        return wrap_angle(self.pendulum_angle_unwrapped)

    def copy(self) -> "RobotState":
        return RobotState(
            position=self.position.copy(),
            orientation=self.orientation.copy(),
            linear_velocity=self.linear_velocity.copy(),
            angular_velocity=self.angular_velocity.copy(),
            pendulum_angle_unwrapped=self.pendulum_angle_unwrapped,
            pendulum_velocity=self.pendulum_velocity,
            time=self.time,
        )

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.position))
            and np.all(np.isfinite(self.orientation))
            and np.all(np.isfinite(self.linear_velocity))
            and np.all(np.isfinite(self.angular_velocity))
            and math.isfinite(self.pendulum_angle_unwrapped)
            and math.isfinite(self.pendulum_velocity)
        )


@dataclass
class MotorModel:
    velocity_setpoint: float = 0.0
    max_torque: float = 0.3
    velocity_gain: float = 0.05  # N*m per rad/s of velocity error
    max_speed: float = 21.0

    def set_setpoint(self, value: float) -> None:
        self.velocity_setpoint = max(-self.max_speed, min(self.max_speed, value))


@dataclass(frozen=True)
class ContactModel:
    normal_stiffness: float = 2e4
    normal_damping: float = 50.0
    friction_mu: float = 0.8
    friction_regularization: float = 1e-3  # m/s, linear friction below this slip

    def __post_init__(self):
        if self.normal_stiffness <= 0 or self.friction_mu < 0 or self.friction_regularization <= 0:
            raise ValueError("invalid contact parameters")


@dataclass(frozen=True)
class Contact:
    point: np.ndarray  # world
    normal: np.ndarray  # world, ground surface normal
    penetration: float  # m, > 0 when interpenetrating
    force: np.ndarray  # world, total (normal + friction) applied to the shell


def motor_torque(motor: MotorModel, pendulum_velocity: float) -> float:
    """Velocity-tracking torque, saturated at the motor limit."""
    raw = motor.velocity_gain * (motor.velocity_setpoint - pendulum_velocity)
    return max(-motor.max_torque, min(motor.max_torque, raw))


def upright_orientation(yaw: float = 0.0) -> np.ndarray:
    """Orientation with the motor axis horizontal (the rolling attitude):
    body z maps to the world direction (-sin yaw, cos yaw, 0). At yaw = 0 the
    pendulum plane is the x-z plane, so theta = 0 points the pendulum along
    +x and theta = pi/2 hangs it straight down."""
    from .mathutil import quat_from_axis_angle, quat_mul

    tip = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), -math.pi / 2)
    return quat_mul(quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw), tip)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross carries heavy axis bookkeeping; 3-vectors are the hot case here
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


class Simulator:
    """Owns the precomputed model data for one robot; states pass through.

    Instances are single-threaded; run one per worker. All randomness lives
    with callers, so identical (state, inputs, dt) give bit-identical output.
    """

    # scan fan resolution and refinement schedule for the deepest-point search;
    # the first span covers the fan spacing, and the value error at the final
    # interior minimum is quadratic in the remaining grid pitch (~1e-6 m)
    SCAN_LAT = 24
    SCAN_LON = 48
    REFINE_SPANS = (0.07, 0.0175)  # rad, shrinking 5x5 grid rounds
    AIRBORNE_MARGIN = 5e-3  # m, fan gap above which refinement is skipped

    def __init__(
        self,
        shell: ShellModel,
        motor: MotorModel | None = None,
        contact: ContactModel | None = None,
        terrain: Terrain | None = None,
    ):
        if not np.allclose(shell.axis, [0.0, 0.0, 1.0], atol=1e-12):
            raise ValueError("the dynamics body frame requires the motor axis along body z")
        self.shell = shell
        self.motor = motor if motor is not None else MotorModel()
        self.contact = contact if contact is not None else ContactModel()
        self.terrain = terrain if terrain is not None else Terrain()

        props = mass_properties(shell)
        self.m_s = shell.shell_mass
        self.m_p = shell.pendulum_mass
        self.m_tot = props.total_mass
        self.c_s = props.shell_com
        self.i_s = props.shell_inertia
        self.arm = shell.pendulum_arm
        self._pendulum_live = self.m_p * self.arm**2 > 1e-12

        dirs = shell.direction_grid(self.SCAN_LAT, self.SCAN_LON)
        self._scan_dirs = dirs
        self._scan_verts = dirs * shell.radial_unchecked(dirs)[:, None]
        self._max_radius = float(shell.base_radius * (1.0 + abs(shell.bulge_amplitude)))
        self._g = np.array([0.0, 0.0, -GRAVITY])
        self._flat_normal = np.array([0.0, 0.0, 1.0])
        self._sphere = shell.bulge_amplitude == 0.0
        offs = np.linspace(-1.0, 1.0, 5)
        grid = np.stack(np.meshgrid(offs, offs, indexing="ij"), axis=-1).reshape(-1, 2)
        self._refine_grids = [span * grid for span in self.REFINE_SPANS]
        # constant mass-matrix blocks (shell-only terms)
        self._m_ww_shell = self.i_s + self.m_s * (
            (self.c_s @ self.c_s) * np.eye(3) - np.outer(self.c_s, self.c_s)
        )
        self._m_vw_shell_body = -self.m_s * skew(self.c_s)

    # -- contact ------------------------------------------------------------

    def _deepest_point(self, state: RobotState, rot: np.ndarray):
        """Returns (gap, body_dir, world_point, ground_normal) of the deepest
        surface point relative to the terrain (gap < 0 means penetration)."""
        pos = state.position
        flat = self.terrain.flat

        if self._sphere and flat:
            # closed form: the lowest sphere point sits straight below center
            n0 = -rot[2]
            rho = self.shell.base_radius
            gap = float(pos[2] - rho)
            point = rot @ (rho * n0) + pos
            return gap, rho * n0, point, self._flat_normal

        if flat:
            gaps = self._scan_verts @ rot[2] + pos[2]
        else:
            world = self._scan_verts @ rot.T + pos
            gaps = world[:, 2] - self.terrain.height(world[:, 0], world[:, 1])
        best = int(np.argmin(gaps))
        fan_gap = float(gaps[best])

        if fan_gap > self.AIRBORNE_MARGIN:
            # clearly airborne; the fan value is accurate enough for logging
            point = rot @ self._scan_verts[best] + pos
            normal = self._flat_normal if flat else self.terrain.normal(point[0], point[1])
            return fan_gap, self._scan_verts[best], point, normal

        # the bulge pattern can carry two near-equal contact basins (bulged vs
        # dented side); refine the best fan candidate of each and keep the deeper
        seeds = [best]
        away = self._scan_dirs @ self._scan_dirs[best] < 0.97
        if np.any(away):
            second = int(np.argmin(np.where(away, gaps, np.inf)))
            if gaps[second] < fan_gap + 2e-3:
                seeds.append(second)

        gap, n0, rho = math.inf, self._scan_dirs[best], 0.0
        for seed in seeds:
            n_s, gap_s, rho_s = self._refine_seed(self._scan_dirs[seed], rot, pos, flat)
            if gap_s < gap:
                gap, n0, rho = gap_s, n_s, rho_s

        point = rot @ (rho * n0) + pos
        ground_n = self._flat_normal if flat else self.terrain.normal(point[0], point[1])
        return gap, rho * n0, point, ground_n

    def _refine_seed(self, n0: np.ndarray, rot: np.ndarray, pos: np.ndarray, flat: bool):
        t1 = np.array([1.0, 0.0, 0.0]) if abs(n0[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        gap = math.inf
        rho = 0.0
        for grid in self._refine_grids:
            e1 = t1 - n0 * (t1 @ n0)
            e1 /= math.sqrt(e1 @ e1)
            e2 = _cross(n0, e1)
            cand = n0 + grid[:, 0, None] * e1 + grid[:, 1, None] * e2
            cand /= np.sqrt(np.einsum("ij,ij->i", cand, cand))[:, None]
            radii = self.shell.radial_unchecked(cand)
            if flat:
                g = (cand @ rot[2]) * radii + pos[2]
            else:
                pts = (cand * radii[:, None]) @ rot.T + pos
                g = pts[:, 2] - self.terrain.height(pts[:, 0], pts[:, 1])
            k = int(np.argmin(g))
            n0 = cand[k]
            gap = float(g[k])
            rho = float(radii[k])
        return n0, gap, rho

    def contact_resolve(self, state: RobotState) -> list[Contact]:
        """Penalty contact at the deepest point; empty when airborne.

        The returned force follows the pure contact law (no integrator
        stabilization): normal spring-damper clamped at zero, friction
        regularized linearly below the slip threshold.
        """
        rot = quat_to_mat(state.orientation)
        gap, r_c_body, point, normal = self._deepest_point(state, rot)
        if gap >= 0.0:
            return []
        penetration = -gap
        f_n, v_t, slip = self._normal_force_and_slip(state, rot, r_c_body, normal, penetration)
        if f_n <= 0.0:
            return []
        mu = self.contact.friction_mu
        v_eps = self.contact.friction_regularization
        f_t_mag = mu * f_n * min(1.0, slip / v_eps)
        force = f_n * normal - (f_t_mag / slip) * v_t if slip > 1e-12 else f_n * normal
        return [Contact(point=point, normal=normal, penetration=penetration, force=force)]

    def _normal_force_and_slip(self, state, rot, r_c_body, normal, penetration):
        v_point = state.linear_velocity + rot @ _cross(state.angular_velocity, r_c_body)
        separation_speed = float(v_point @ normal)
        f_n = max(
            0.0,
            self.contact.normal_stiffness * penetration
            - self.contact.normal_damping * separation_speed,
        )
        v_t = v_point - separation_speed * normal
        slip = float(np.linalg.norm(v_t))
        return f_n, v_t, slip

    # -- dynamics -----------------------------------------------------------

    def _mass_matrix_and_bias(self, state: RobotState, rot: np.ndarray):
        m_s, m_p, arm = self.m_s, self.m_p, self.arm
        theta = state.pendulum_angle_unwrapped
        omega = state.angular_velocity
        r = arm * np.array([math.cos(theta), math.sin(theta), 0.0])
        s = arm * np.array([-math.sin(theta), math.cos(theta), 0.0])

        mass = np.zeros((7, 7))
        mass[0, 0] = mass[1, 1] = mass[2, 2] = self.m_tot
        m_vw = rot @ (self._m_vw_shell_body - m_p * skew(r))
        mass[0:3, 3:6] = m_vw
        mass[3:6, 0:3] = m_vw.T
        m_ww = self._m_ww_shell + m_p * ((r @ r) * np.eye(3) - np.outer(r, r))
        mass[3:6, 3:6] = m_ww
        m_vt = m_p * (rot @ s)
        mass[0:3, 6] = m_vt
        mass[6, 0:3] = m_vt
        m_wt = m_p * _cross(r, s)
        mass[3:6, 6] = m_wt
        mass[6, 3:6] = m_wt
        mass[6, 6] = m_p * arm * arm if self._pendulum_live else 1.0

        w_rel = omega + np.array([0.0, 0.0, state.pendulum_velocity])
        bias_p = _cross(omega, _cross(w_rel, r)) + state.pendulum_velocity * _cross(w_rel, s)
        bias_s = _cross(omega, _cross(omega, self.c_s))
        bias = np.zeros(7)
        bias[0:3] = rot @ (m_s * bias_s + m_p * bias_p)
        bias[3:6] = (
            m_s * _cross(self.c_s, bias_s)
            + m_p * _cross(r, bias_p)
            + _cross(omega, self.i_s @ omega)
        )
        bias[6] = m_p * float(s @ bias_p)
        return mass, bias, r, s

    def step(self, state: RobotState, dt: float, step_index: int = 0):
        """One semi-implicit Euler physics step. Returns (state, contacts, min_gap)."""
        if not 0.0 < dt <= 5e-3:
            raise ValueError("dt must lie in (0, 5e-3] seconds")
        rot = quat_to_mat(state.orientation)
        mass, bias, r, s = self._mass_matrix_and_bias(state, rot)
        g_body = rot.T @ self._g

        rhs = np.zeros(7)
        rhs[0:3] = self.m_tot * self._g
        rhs[3:6] = self.m_s * _cross(self.c_s, g_body) + self.m_p * _cross(r, g_body)
        tau = motor_torque(self.motor, state.pendulum_velocity)
        # the motor is an internal torque pair about body z: +tau on the arm,
        # -tau on the shell; the pair sums to zero and enters only the joint row
        assert tau + (-tau) == 0.0
        rhs[6] = self.m_p * float(s @ g_body) + (tau if self._pendulum_live else 0.0)

        gap, r_c_body, point, normal = self._deepest_point(state, rot)
        contacts: list[Contact] = []
        if gap < 0.0:
            penetration = -gap
            f_n, v_t, slip = self._normal_force_and_slip(state, rot, r_c_body, normal, penetration)
            if f_n > 0.0:
                force = f_n * normal
                if slip > 1e-12:
                    t_hat = v_t / slip
                    jac_t = np.concatenate([t_hat, _cross(r_c_body, rot.T @ t_hat), [0.0]])
                    w_t = float(jac_t @ np.linalg.solve(mass, jac_t))
                    mu, v_eps = self.contact.friction_mu, self.contact.friction_regularization
                    f_t = mu * f_n * min(1.0, slip / v_eps)
                    f_t = min(f_t, slip / (dt * w_t))  # never reverse slip in one step
                    force = force - f_t * t_hat
                contacts.append(Contact(point=point, normal=normal, penetration=penetration, force=force))
                rhs[0:3] += force
                rhs[3:6] += _cross(r_c_body, rot.T @ force)

        accel = np.linalg.solve(mass, rhs - bias)
        if not self._pendulum_live:
            accel[6] = 0.0

        new = state.copy()
        new.linear_velocity = state.linear_velocity + accel[0:3] * dt
        new.angular_velocity = state.angular_velocity + accel[3:6] * dt
        new.pendulum_velocity = state.pendulum_velocity + float(accel[6]) * dt
        new.position = state.position + new.linear_velocity * dt
        new.orientation = quat_integrate_body(state.orientation, new.angular_velocity, dt)
        new.pendulum_angle_unwrapped = state.pendulum_angle_unwrapped + new.pendulum_velocity * dt
        new.time = state.time + dt
        if not new.is_finite():
            raise SimulationDivergedError(step_index)
        return new, contacts, gap

    def control_step(self, state: RobotState, setpoint: float, substeps: int, dt: float):
        """Hold one motor setpoint for `substeps` physics steps.

        Returns (state, contact_count, min_gap) where contact_count is the
        largest per-substep contact count and min_gap the lowest surface
        clearance seen during the interval.
        """
        self.motor.set_setpoint(setpoint)
        worst_count = 0
        min_gap = math.inf
        base_index = int(round(state.time / dt))
        for k in range(substeps):
            state, contacts, gap = self.step(state, dt, base_index + k)
            worst_count = max(worst_count, len(contacts))
            min_gap = min(min_gap, gap)
        return state, worst_count, min_gap

    # -- diagnostics ----------------------------------------------------------

    def _point_states(self, state: RobotState, rot: np.ndarray):
        theta = state.pendulum_angle_unwrapped
        r = self.arm * np.array([math.cos(theta), math.sin(theta), 0.0])
        s = self.arm * np.array([-math.sin(theta), math.cos(theta), 0.0])
        x_s = state.position + rot @ self.c_s
        v_s = state.linear_velocity + rot @ _cross(state.angular_velocity, self.c_s)
        x_p = state.position + rot @ r
        v_p = state.linear_velocity + rot @ (
            _cross(state.angular_velocity, r) + state.pendulum_velocity * s
        )
        return x_s, v_s, x_p, v_p

    def energy(self, state: RobotState) -> float:
        """Total mechanical energy (kinetic + gravitational)."""
        rot = quat_to_mat(state.orientation)
        x_s, v_s, x_p, v_p = self._point_states(state, rot)
        omega = state.angular_velocity
        kinetic = (
            0.5 * self.m_s * float(v_s @ v_s)
            + 0.5 * float(omega @ (self.i_s @ omega))
            + 0.5 * self.m_p * float(v_p @ v_p)
        )
        potential = GRAVITY * (self.m_s * x_s[2] + self.m_p * x_p[2])
        return kinetic + potential

    def angular_momentum_about_com(self, state: RobotState) -> np.ndarray:
        rot = quat_to_mat(state.orientation)
        x_s, v_s, x_p, v_p = self._point_states(state, rot)
        x_c = (self.m_s * x_s + self.m_p * x_p) / self.m_tot
        v_c = (self.m_s * v_s + self.m_p * v_p) / self.m_tot
        spin = rot @ (self.i_s @ state.angular_velocity)
        return (
            self.m_s * np.cross(x_s - x_c, v_s - v_c)
            + self.m_p * np.cross(x_p - x_c, v_p - v_c)
            + spin
        )

    def rest_height(self, x: float = 0.0, y: float = 0.0, quat: np.ndarray | None = None) -> float:
        """Height placing the body origin so the lowest surface point touches
        the ground, sunk by the static penalty penetration."""
        probe = RobotState(position=np.array([x, y, 10.0 * self._max_radius]))
        if quat is not None:
            probe.orientation = quat.copy()
        rot = quat_to_mat(probe.orientation)
        gap, _, _, _ = self._deepest_point(probe, rot)
        sink = self.m_tot * GRAVITY / self.contact.normal_stiffness
        return float(probe.position[2] - gap - sink)


def step(
    state: RobotState,
    shell: ShellModel,
    motor: MotorModel,
    contact: ContactModel,
    terrain: Terrain,
    dt: float,
) -> RobotState:
    """One-shot step for callers without a Simulator; prefer Simulator in loops."""
    sim = Simulator(shell, motor, contact, terrain)
    new, _, _ = sim.step(state, dt)
    return new


def contact_resolve(
    state: RobotState, shell: ShellModel, terrain: Terrain, contact: ContactModel
) -> list[Contact]:
    sim = Simulator(shell, None, contact, terrain)
    return sim.contact_resolve(state)


def jump_impulse_check(times, contact_counts, min_gaps, window: float = 0.05):
    """Detect liftoff in a completed log: airborne iff the contact set stays
    empty for a contiguous window of at least `window` seconds.

    Returns (airborne, clearance, duration) with clearance the best ground
    separation inside the longest airborne window.
    """
    times = np.asarray(times, dtype=float)
    counts = np.asarray(contact_counts)
    gaps = np.asarray(min_gaps, dtype=float)
    if len(times) == 0:
        raise ValueError("empty simulation log")
    best_duration = 0.0
    best_clearance = 0.0
    start = None
    for i in range(len(times)):
        if counts[i] == 0:
            if start is None:
                start = i
        if counts[i] != 0 or i == len(times) - 1:
            if start is not None:
                end = i if counts[i] != 0 else i + 1
                duration = times[end - 1] - times[start]
                if duration > best_duration:
                    best_duration = duration
                    best_clearance = float(max(0.0, gaps[start:end].max()))
                start = None
    if best_duration >= window:
        return True, best_clearance, best_duration
    return False, 0.0, 0.0
