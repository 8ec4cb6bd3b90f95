"""Ground-truth vehicle simulator with hidden terrain state.

The vehicle is a kinematic Ackermann car whose actuators follow the command
with first-order lag. Terrain attenuates the realized curvature (understeer
that grows with speed and roughness) and adds a small speed drag. The IMU
model exposes the terrain only through vibration, so a learner has to infer
it from the inertial stream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import point_in_polygon, polygon_is_simple, wrap_angle

MAX_SPEED = 3.0
MAX_CURVATURE = 1.35
GRAVITY = 9.81

# Relative vibration coupling per IMU channel: ax, ay, az, gx, gy, gz.
VIBRATION_COUPLING = np.array([0.3, 0.3, 1.0, 0.2, 0.2, 0.1])

TRAJECTORY_HEADER = ["time", "x", "y", "heading", "speed", "yaw_rate", "cmd_v", "cmd_c"]


class SimulationFault(RuntimeError):
    """Raised when the simulator receives or produces non-finite values."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.uint64(seed % 2**64))


@dataclass(frozen=True, slots=True)
class ControlInput:
    velocity: float
    curvature: float

    def __post_init__(self):
        # clamped on construction; NaN is preserved so callers can detect it
        v, c = float(self.velocity), float(self.curvature)
        object.__setattr__(self, "velocity", min(max(v, 0.0), MAX_SPEED) if v == v else v)
        object.__setattr__(self, "curvature", min(max(c, -MAX_CURVATURE), MAX_CURVATURE) if c == c else c)

    def as_tuple(self) -> tuple[float, float]:
        return self.velocity, self.curvature


@dataclass(frozen=True, slots=True)
class VehicleState:
    position_x: float = 0.0
    position_y: float = 0.0
    heading: float = 0.0
    linear_speed: float = 0.0
    yaw_rate: float = 0.0
    actuator_speed: float = 0.0
    actuator_curvature: float = 0.0
    time: float = 0.0
    # longitudinal acceleration over the last step, feeds accel_x
    linear_accel: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return self.position_x, self.position_y


@dataclass(frozen=True)
class TerrainParams:
    grip: float = 1.0
    roughness: float = 0.0
    drag: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.grip <= 1.0:
            raise ValueError(f"grip must lie in [0, 1], got {self.grip}")
        if self.roughness < 0.0 or self.drag < 0.0:
            raise ValueError("roughness and drag must be non-negative")


IDEAL_TERRAIN = TerrainParams(1.0, 0.0, 0.0)


@dataclass(frozen=True)
class TerrainPatch:
    boundary: tuple[tuple[float, float], ...]
    params: TerrainParams
    name: str = ""

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.boundary)
        object.__setattr__(self, "boundary", pts)
        if len(pts) < 3:
            raise ValueError(f"patch {self.name!r}: boundary needs at least 3 vertices")
        if not polygon_is_simple(pts):
            raise ValueError(f"patch {self.name!r}: boundary polygon self-intersects")

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.boundary]
        ys = [p[1] for p in self.boundary]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class TerrainField:
    patches: tuple[TerrainPatch, ...] = ()
    nominal: TerrainParams = IDEAL_TERRAIN
    _boxes: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "_boxes", tuple(p.bbox for p in self.patches))

    def at(self, x: float, y: float) -> TerrainParams:
        # later patches override earlier ones
        for patch, (x0, y0, x1, y1) in zip(reversed(self.patches), reversed(self._boxes)):
            if x0 <= x <= x1 and y0 <= y <= y1 and point_in_polygon(x, y, patch.boundary):
                return patch.params
        return self.nominal

    @classmethod
    def uniform(cls, params: TerrainParams) -> "TerrainField":
        return cls((), params)


def terrain_at(field_: TerrainField, point: Sequence[float]) -> TerrainParams:
    return field_.at(float(point[0]), float(point[1]))


@dataclass(frozen=True)
class SimConfig:
    physics_dt: float = 0.001
    imu_dt: float = 0.005
    control_dt: float = 0.05
    max_accel: float = 4.0
    speed_lag_tau: float = 0.15
    steer_lag_tau: float = 0.08
    understeer_gain: float = 0.6
    vibration_gain: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.physics_dt <= self.imu_dt <= self.control_dt:
            raise ValueError("need 0 < physics_dt <= imu_dt <= control_dt")
        for small, big in ((self.physics_dt, self.imu_dt), (self.imu_dt, self.control_dt)):
            ratio = big / small
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{big} is not an integer multiple of {small}")
        if self.max_accel <= 0 or self.speed_lag_tau < 0 or self.steer_lag_tau < 0:
            raise ValueError("max_accel must be positive and lag constants non-negative")

    @property
    def steps_per_imu(self) -> int:
        return int(round(self.imu_dt / self.physics_dt))

    @property
    def imu_per_control(self) -> int:
        return int(round(self.control_dt / self.imu_dt))


@dataclass(frozen=True, slots=True)
class ImuSample:
    accel_x: float
    accel_y: float
    accel_z: float
    gyro_x: float
    gyro_y: float
    gyro_z: float
    time: float

    def as_array(self) -> np.ndarray:
        return np.array([self.accel_x, self.accel_y, self.accel_z, self.gyro_x, self.gyro_y, self.gyro_z])


def grip_factor(grip: float, roughness: float, speed: float, understeer_gain: float) -> float:
    return grip / (1.0 + understeer_gain * roughness * speed * speed)


def _finite(*vals) -> bool:
    return all(math.isfinite(v) for v in vals)


def step(state: VehicleState, u: ControlInput, field_: TerrainField, cfg: SimConfig, rng=None) -> VehicleState:
    """Advance the vehicle by one physics step of ``cfg.physics_dt``.

    The terrain is sampled at the pose at the start of the step. ``rng`` is
    accepted for interface symmetry with :func:`sample_imu`; the dynamics
    themselves are noise-free.
    """
    s = state
    if not _finite(s.position_x, s.position_y, s.heading, s.linear_speed, s.actuator_speed,
                   s.actuator_curvature, u.velocity, u.curvature):
        raise SimulationFault(f"non-finite state or input at t={s.time}: {s}, {u}")
    dt = cfg.physics_dt

    # actuator lag (exact discretization), speed additionally rate-limited
    a_v = math.exp(-dt / cfg.speed_lag_tau) if cfg.speed_lag_tau > 0 else 0.0
    target_v = u.velocity + (s.actuator_speed - u.velocity) * a_v
    dv = target_v - s.actuator_speed
    lim = cfg.max_accel * dt
    if dv > lim:
        dv = lim
    elif dv < -lim:
        dv = -lim
    act_v = max(s.actuator_speed + dv, 0.0)
    a_c = math.exp(-dt / cfg.steer_lag_tau) if cfg.steer_lag_tau > 0 else 0.0
    act_c = u.curvature + (s.actuator_curvature - u.curvature) * a_c
    act_c = min(max(act_c, -MAX_CURVATURE), MAX_CURVATURE)

    terrain = field_.at(s.position_x, s.position_y)
    v_eff = max(act_v * (1.0 - terrain.drag * dt), 0.0)
    c_eff = act_c * grip_factor(terrain.grip, terrain.roughness, v_eff, cfg.understeer_gain)

    # constant-curvature arc via the chord: length v*dt*sinc(theta/2) at heading + theta/2
    theta = v_eff * c_eff * dt
    half = 0.5 * theta
    chord = v_eff * dt * (math.sin(half) / half if abs(half) > 1e-12 else 1.0)
    mid = s.heading + half
    x = s.position_x + chord * math.cos(mid)
    y = s.position_y + chord * math.sin(mid)
    new = VehicleState(
        position_x=x,
        position_y=y,
        heading=wrap_angle(s.heading + theta),
        linear_speed=v_eff,
        yaw_rate=v_eff * c_eff,
        actuator_speed=act_v,
        actuator_curvature=act_c,
        time=s.time + dt,
        linear_accel=(v_eff - s.linear_speed) / dt,
    )
    if not _finite(x, y, new.heading, v_eff, new.yaw_rate):
        raise SimulationFault(f"simulation produced non-finite state at t={new.time}")
    return new


def sample_imu(state: VehicleState, field_: TerrainField, cfg: SimConfig, rng: np.random.Generator) -> ImuSample:
    """Synthesize one 6-DoF inertial reading for the current state.

    Vibration noise has standard deviation ``vibration_gain * roughness *
    speed`` on the vertical axis and scaled-down copies on the other axes.
    The noise stream is always advanced by six draws so that sample streams
    stay aligned regardless of terrain.
    """
    terrain = field_.at(state.position_x, state.position_y)
    sigma = cfg.vibration_gain * terrain.roughness * state.linear_speed
    noise = rng.standard_normal(6) * (VIBRATION_COUPLING * sigma)
    v = state.linear_speed
    return ImuSample(
        accel_x=state.linear_accel + noise[0],
        accel_y=v * state.yaw_rate + noise[1],  # v^2 * c_eff
        accel_z=GRAVITY + noise[2],
        gyro_x=noise[3],
        gyro_y=noise[4],
        gyro_z=state.yaw_rate + noise[5],
        time=state.time,
    )


def rollout_ideal(x: VehicleState | None, u: ControlInput, horizon: float) -> tuple[float, float, float]:
    """Robot-frame displacement under the no-slip, no-lag arc model."""
    v, c = u.velocity, u.curvature
    if abs(c) < 1e-6:
        return v * horizon, 0.0, 0.0
    theta = v * c * horizon
    return math.sin(theta) / c, (1.0 - math.cos(theta)) / c, theta


def rollout_ideal_batch(v: float, curvatures: np.ndarray, horizon: float) -> np.ndarray:
    """Vectorized :func:`rollout_ideal` over many curvatures, shape (n, 3)."""
    c = np.asarray(curvatures, dtype=float)
    straight = np.abs(c) < 1e-6
    safe = np.where(straight, 1.0, c)
    theta = v * c * horizon
    dx = np.where(straight, v * horizon, np.sin(theta) / safe)
    dy = np.where(straight, 0.0, (1.0 - np.cos(theta)) / safe)
    return np.stack([dx, dy, np.where(straight, 0.0, theta)], axis=1)


class Simulator:
    """One simulation instance: vehicle state, terrain, noise stream and IMU history.

    IMU readings are taken every ``imu_dt`` after the physics step that ends
    at that instant. The history is a fixed-size ring large enough for one
    observation window.
    """

    def __init__(self, field_: TerrainField, cfg: SimConfig, state: VehicleState | None = None,
                 seed: int | None = None, history: int = 100):
        self.field = field_
        self.cfg = cfg
        self.state = state or VehicleState()
        self.rng = make_rng(cfg.rng_seed if seed is None else seed)
        self.history = history
        self._imu = np.zeros((history, 6))
        self._imu_count = 0

    def reset_pose(self, state: VehicleState) -> None:
        self.state = state

    @property
    def imu_count(self) -> int:
        return self._imu_count

    def imu_window(self) -> np.ndarray:
        """Last ``history`` IMU samples, oldest first, shape (history, 6)."""
        if self._imu_count < self.history:
            raise ValueError(f"only {self._imu_count} IMU samples recorded, need {self.history}")
        k = self._imu_count % self.history
        return np.concatenate([self._imu[k:], self._imu[:k]])

    def advance(self, u: ControlInput, duration: float | None = None):
        """Hold ``u`` for ``duration`` (default one control period).

        Returns per-IMU-tick arrays: states (n, 4) of x, y, actuator_speed,
        time and the IMU readings (n, 6).
        """
        cfg = self.cfg
        duration = cfg.control_dt if duration is None else duration
        n_ticks = int(round(duration / cfg.imu_dt))
        spi = cfg.steps_per_imu
        states = np.empty((n_ticks, 4))
        readings = np.empty((n_ticks, 6))
        s = self.state
        for k in range(n_ticks):
            for _ in range(spi):
                s = step(s, u, self.field, cfg)
            imu = sample_imu(s, self.field, cfg, self.rng)
            row = imu.as_array()
            self._imu[self._imu_count % self.history] = row
            self._imu_count += 1
            states[k] = (s.position_x, s.position_y, s.actuator_speed, s.time)
            readings[k] = row
        self.state = s
        return states, readings


def write_trajectory_csv(path: str | Path, rows) -> None:
    """Rows are sequences matching :data:`TRAJECTORY_HEADER`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def zero_lag(cfg: SimConfig) -> SimConfig:
    return replace(cfg, speed_lag_tau=0.0, steer_lag_tau=0.0)
