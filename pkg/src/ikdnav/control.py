"""Controllers under comparison: sampling baseline, ablated and full learned models."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .geometry import ray_cast
from .plan import CarrotTarget, Track, carrot, project_point
from .sim import MAX_CURVATURE, ControlInput, VehicleState, rollout_ideal_batch

log = logging.getLogger(__name__)

MODES = ("baseline", "ablated", "learned")
# learned corrections are only queried inside the labeled speed range
MIN_LEARNED_SPEED = 0.2


class ControllerFault(RuntimeError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    num_samples: int = 100
    horizon: float = 0.5
    curvature_window: float = 2 * MAX_CURVATURE
    lookahead: float = 1.0

    def __post_init__(self):
        if self.num_samples < 2 or self.horizon <= 0:
            raise ValueError("need num_samples >= 2 and horizon > 0")


@dataclass(frozen=True)
class VelocityScheduleConfig:
    target_speed: float = 2.0
    max_accel: float = 4.0
    safety_distance_margin: float = 0.3
    control_dt: float = 0.05

    def __post_init__(self):
        if not 0 < self.target_speed <= 3.0:
            raise ValueError("target_speed must lie in (0, 3]")
        if self.max_accel <= 0:
            raise ValueError("max_accel must be positive")


@dataclass(frozen=True)
class ControlDecision:
    u: ControlInput
    u_baseline: ControlInput
    delta_x: tuple[float, float, float]
    progress_s: float = 0.0
    cross_track: float = 0.0
    fault: str | None = None


def schedule_velocity(cfg: VelocityScheduleConfig, current_speed: float, distance_ahead: float) -> float:
    """Fastest speed within the target, the acceleration limit and the stopping distance."""
    stop = math.sqrt(2.0 * cfg.max_accel * max(0.0, distance_ahead - cfg.safety_distance_margin))
    return max(0.0, min(cfg.target_speed, current_speed + cfg.max_accel * cfg.control_dt, stop))


def curvature_samples(center: float, cfg: BaselineConfig) -> np.ndarray:
    """Evenly spaced candidates over the feasible window, plus 0 when inside it.

    The grid is built from integer offsets around the window midpoint so that
    mirroring the window mirrors every sample bit-exactly.
    """
    lo = max(-MAX_CURVATURE, center - cfg.curvature_window / 2)
    hi = min(MAX_CURVATURE, center + cfg.curvature_window / 2)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    n = cfg.num_samples
    k = 2 * np.arange(n) - (n - 1)
    cs = mid + half * k / (n - 1)
    if lo <= 0.0 <= hi and not np.any(cs == 0.0):
        cs = np.append(cs, 0.0)
    return cs


def baseline_select(x: VehicleState, target: CarrotTarget, cfg: BaselineConfig, v_sched: float,
                    return_candidates: bool = False):
    """Pick the curvature whose ideal-arc endpoint lands closest to the carrot."""
    if v_sched <= 0:
        raise ValueError("baseline_select needs a positive scheduled speed")
    cs = curvature_samples(x.actuator_curvature, cfg)
    ends = rollout_ideal_batch(v_sched, cs, cfg.horizon)
    tx, ty = target.delta_x[0], target.delta_x[1]
    d2 = (ends[:, 0] - tx) ** 2 + (ends[:, 1] - ty) ** 2
    # primary: distance; then smaller |c|; then positive c
    order = np.lexsort((-cs, np.abs(cs), d2))
    best = ControlInput(v_sched, float(cs[order[0]]))
    if return_candidates:
        return best, cs, d2
    return best


def learned_select(delta_x_proxy, y, params: nn.ParameterSet) -> ControlInput:
    """Query the full model with the desired (v, c) and the flattened IMU window."""
    v_r, c_r = delta_x_proxy
    if y is None:
        raise ControllerFault("learned model needs an observation window")
    try:
        v, c = nn.forward(params, v_r, c_r, y)
    except nn.NetworkFault as exc:
        raise ControllerFault(str(exc)) from exc
    if not (math.isfinite(v) and math.isfinite(c)):
        raise ControllerFault("learned model produced a non-finite command")
    return ControlInput(v, c)


def ablated_select(delta_x_proxy, params: nn.ParameterSet) -> ControlInput:
    v_r, c_r = delta_x_proxy
    v, c = nn.forward(params, v_r, c_r)
    if not (math.isfinite(v) and math.isfinite(c)):
        raise ControllerFault("ablated model produced a non-finite command")
    return ControlInput(v, c)


@dataclass
class Controller:
    """Receding-horizon controller state for one run.

    Keeps the last projection so progress never jumps backward, and
    optionally logs each decision as (time, mode, v_in, c_in, v_out, c_out).
    """

    track: Track
    mode: str = "baseline"
    params: nn.ParameterSet | None = None
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    velocity: VelocityScheduleConfig = field(default_factory=VelocityScheduleConfig)
    log_decisions: bool = False
    previous_s: float | None = None
    decisions: list = field(default_factory=list)
    params_finite: bool = field(default=True, init=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown controller mode {self.mode!r}; valid modes: {', '.join(MODES)}")
        if self.mode != "baseline" and self.params is None:
            raise ValueError(f"mode {self.mode!r} needs trained parameters")
        if self.params is not None and self.mode != "baseline":
            wants_encoder = self.mode == "learned"
            if self.params.spec.use_encoder != wants_encoder:
                raise ValueError(f"mode {self.mode!r} got parameters with use_encoder={self.params.spec.use_encoder}")
            # parameters are immutable once trained, so check them once
            self.params_finite = self.params.is_finite()

    def reset(self, s: float | None = None) -> None:
        self.previous_s = s

    def step(self, x: VehicleState, imu_window: np.ndarray | None = None,
             distance_ahead: float | None = None) -> ControlDecision:
        if distance_ahead is None:
            distance_ahead = ray_cast(x.position_x, x.position_y, x.heading, self.track.boundary_segments)
        return control_step(x, self, imu_window, distance_ahead)


def control_step(x: VehicleState, ctl: Controller, imu_window, distance_ahead: float) -> ControlDecision:
    """project -> carrot -> schedule velocity -> baseline -> optional learned correction."""
    plan = ctl.track.plan
    arc, xte, _, _ = project_point(plan, x.position_x, x.position_y, ctl.previous_s)
    s = arc / plan.total_length
    ctl.previous_s = s
    target = carrot(plan, s, x, ctl.baseline.lookahead)
    v_sched = schedule_velocity(ctl.velocity, x.actuator_speed, distance_ahead)
    v_probe = max(v_sched, 0.1)
    horizon = max(ctl.baseline.lookahead / v_probe, ctl.velocity.control_dt)
    u_b = baseline_select(x, target, replace(ctl.baseline, horizon=horizon), v_probe)
    u_b = ControlInput(v_sched, u_b.curvature)
    u, fault = u_b, None
    if ctl.mode != "baseline" and u_b.velocity >= MIN_LEARNED_SPEED:
        try:
            if not ctl.params_finite:
                raise ControllerFault("parameters contain non-finite values")
            if ctl.mode == "learned":
                window = None if imu_window is None else _flat(imu_window)
                u = learned_select(u_b.as_tuple(), window, ctl.params)
            else:
                u = ablated_select(u_b.as_tuple(), ctl.params)
        except ControllerFault as exc:
            log.warning("controller fault, falling back to baseline: %s", exc)
            u, fault = u_b, str(exc)
    if ctl.log_decisions:
        ctl.decisions.append((x.time, ctl.mode, u_b.velocity, u_b.curvature, u.velocity, u.curvature))
    return ControlDecision(u, u_b, target.delta_x, s, xte, fault)


def _flat(window) -> np.ndarray:
    w = np.asarray(window, dtype=float)
    if w.shape == (nn.WINDOW_LEN, nn.CHANNELS):
        return np.ascontiguousarray(w.T).reshape(nn.WINDOW_DIM)
    return w.reshape(nn.WINDOW_DIM)


def write_decisions_csv(path, decisions) -> None:
    with open(path, "w") as fh:
        fh.write("time,mode,v_in,c_in,v_out,c_out\n")
        for t, mode, vi, ci, vo, co in decisions:
            fh.write(f"{t!r},{mode},{vi!r},{ci!r},{vo!r},{co!r}\n")
