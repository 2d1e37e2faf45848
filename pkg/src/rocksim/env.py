"""Episodic RL environment around the simulator: randomized terrain and
commands, reward shaping, termination, reset.

The reward is a reconstruction (the original task reports none): its dominant
term pays ground-plane velocity along the commanded direction; the remaining
terms are standard smoothness/feasibility shaping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    ContactModel,
    MotorModel,
    RobotState,
    SimulationDivergedError,
    Simulator,
    upright_orientation,
)
from .geometry import ShellModel
from .mathutil import quat_to_mat
from .observation import ObservationBuilder
from .policy import action_to_setpoint
from .terrain import flat_terrain, noise_terrain

PENDULUM_SPEED_LIMIT = 21.0  # rad/s, over-speed penalty threshold


@dataclass(frozen=True)
class EpisodeConfig:
    max_duration: float = 10.0  # s
    terrain_roughness: float = 0.005  # m (0 = flat)
    terrain_correlation: float = 0.1  # m
    terrain_extent: float = 8.0  # m
    terrain_cell: float = 0.02  # m
    command_resample_period: float = 0.0  # s, 0 = one command per episode
    fixed_command: tuple[float, float] | None = None  # overrides command sampling
    yaw_range: float = math.pi  # initial yaw uniform in [-range, range]
    random_pendulum_angle: bool = True
    control_period: float = 0.02  # s
    physics_dt: float = 1e-3  # s
    command_frame: str = "world"

    def __post_init__(self):
        if self.max_duration <= 0 or self.control_period <= 0 or self.physics_dt <= 0:
            raise ValueError("durations and periods must be positive")
        if self.terrain_roughness < 0:
            raise ValueError("terrain roughness must be >= 0")

    @property
    def substeps(self) -> int:
        return max(1, int(round(self.control_period / self.physics_dt)))


@dataclass(frozen=True)
class RewardConfig:
    w_speed: float = 1.0
    w_action_rate: float = 0.05
    w_spin: float = 0.01
    w_upright: float = 0.1

    def __post_init__(self):
        for w in (self.w_speed, self.w_action_rate, self.w_spin, self.w_upright):
            if not math.isfinite(w):
                raise ValueError("reward weights must be finite")


def reward(
    state: RobotState,
    prev_state: RobotState,
    action: float,
    prev_action: float,
    command: np.ndarray,
    cfg: RewardConfig,
) -> float:
    """Shaped step reward; see module docstring for provenance."""
    v_xy = state.linear_velocity[:2]
    speed_term = cfg.w_speed * float(v_xy @ command)
    rate_term = cfg.w_action_rate * abs(action - prev_action)
    over = max(0.0, abs(state.pendulum_velocity) - PENDULUM_SPEED_LIMIT)
    spin_term = cfg.w_spin * over * over
    w_z = quat_to_mat(state.orientation)[2, 2]
    upright_term = cfg.w_upright * (1.0 - w_z * w_z)
    return speed_term - rate_term - spin_term + upright_term


class RockEnv:
    """One simulation instance behind a gym-like reset/step interface.

    Instances own all mutable state (no sharing); run one per worker. The
    (seed, action sequence) pair fully determines the trajectory.
    """

    def __init__(
        self,
        shell: ShellModel | None = None,
        motor: MotorModel | None = None,
        contact: ContactModel | None = None,
        episode: EpisodeConfig | None = None,
        reward_cfg: RewardConfig | None = None,
    ):
        self.shell = shell if shell is not None else ShellModel()
        self.episode = episode if episode is not None else EpisodeConfig()
        self.reward_cfg = reward_cfg if reward_cfg is not None else RewardConfig()
        self.sim = Simulator(
            self.shell,
            motor if motor is not None else MotorModel(),
            contact if contact is not None else ContactModel(),
            flat_terrain(),
        )
        self.builder = ObservationBuilder(self.episode.command_frame)
        self._rng = np.random.default_rng(0)
        self.state: RobotState | None = None
        self.command = np.array([1.0, 0.0])
        self.last_action = 0.0
        self._next_resample = math.inf
        self._was_reset = False

    # -- randomization ---------------------------------------------------------

    def _sample_command(self) -> np.ndarray:
        if self.episode.fixed_command is not None:
            d = np.asarray(self.episode.fixed_command, dtype=float)
            return d / np.linalg.norm(d)
        ang = self._rng.uniform(-math.pi, math.pi)
        return np.array([math.cos(ang), math.sin(ang)])

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Fresh episode: new terrain and command from the seeded stream; the
        robot rests at terrain height with random yaw and pendulum angle."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        cfg = self.episode
        if cfg.terrain_roughness > 0.0:
            terrain_seed = int(self._rng.integers(2**31))
            self.sim.terrain = noise_terrain(
                terrain_seed,
                cfg.terrain_roughness,
                cfg.terrain_correlation,
                cfg.terrain_extent,
                cfg.terrain_cell,
            )
        else:
            self.sim.terrain = flat_terrain()
        self.command = self._sample_command()
        yaw = float(self._rng.uniform(-cfg.yaw_range, cfg.yaw_range))
        pend = float(self._rng.uniform(-math.pi, math.pi)) if cfg.random_pendulum_angle else math.pi / 2
        quat = upright_orientation(yaw)
        height = self.sim.rest_height(0.0, 0.0, quat=quat)
        self.state = RobotState(
            position=np.array([0.0, 0.0, height]),
            orientation=quat,
            pendulum_angle_unwrapped=pend,
        )
        self.builder.reset()
        self.last_action = 0.0
        self._next_resample = (
            cfg.command_resample_period if cfg.command_resample_period > 0.0 else math.inf
        )
        self._was_reset = True
        return self.builder.build(self.state, self.command, 0.0)

    def step(self, action: float):
        """Advance one control period. Returns (obs, reward, done, info)."""
        if not self._was_reset or self.state is None:
            raise RuntimeError("step() before reset()")
        action = max(-1.0, min(1.0, float(action)))
        prev_state = self.state
        setpoint = action_to_setpoint(action)
        info: dict = {}
        done = False
        try:
            new_state, contact_count, min_gap = self.sim.control_step(
                prev_state, setpoint, self.episode.substeps, self.episode.physics_dt
            )
            r = reward(new_state, prev_state, action, self.last_action, self.command, self.reward_cfg)
            self.state = new_state
            info["contact_count"] = contact_count
            info["min_gap"] = min_gap
        except SimulationDivergedError as err:
            info["diverged"] = True
            info["diverged_step"] = err.step_index
            done = True
            r = 0.0
            new_state = prev_state  # keep the last finite state for the obs

        if new_state.time >= self.episode.max_duration - 1e-9:
            done = True
        if new_state.time >= self._next_resample:
            self.command = self._sample_command()
            self._next_resample += self.episode.command_resample_period

        v_xy = new_state.linear_velocity[:2]
        info["speed_along_command"] = float(v_xy @ self.command)
        info["time"] = new_state.time
        info["position"] = new_state.position.copy()
        obs = self.builder.build(new_state, self.command, action)
        self.last_action = action
        return obs, r, done, info
