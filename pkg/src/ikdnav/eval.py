"""Lap-based benchmark: run controllers around a track and score per-turn failures."""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import BaselineConfig, Controller, VelocityScheduleConfig
from .geometry import min_boundary_distance
from .nn import ParameterSet
from .plan import Track, project_point
from .sim import (GRAVITY, SimConfig, SimulationFault, Simulator, TerrainField,
                  VehicleState, write_trajectory_csv)

log = logging.getLogger(__name__)

FOOTPRINT_RADIUS = 0.15
STUCK_DISTANCE = 0.1
STUCK_WINDOW = 3.0
RESET_PAST_EXIT = 0.3

PASSED, COLLISION, STUCK = "passed", "collision", "stuck"


@dataclass
class LapResult:
    mode: str
    target_speed: float
    seed: int
    lap_time: float | None
    turn_outcomes: list
    trajectory: np.ndarray  # rows: time, x, y, heading, speed, yaw_rate, cmd_v, cmd_c
    mean_cross_track: float
    max_cross_track: float
    objective_J: float
    cross_track: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    faulted: bool = False
    fault: str | None = None

    @property
    def failures(self) -> int:
        return sum(o != PASSED for o in self.turn_outcomes)


def objective_J(trajectory, plan, gamma: float = 1.0, lap_time: float | None = None) -> float:
    """Navigation time plus gamma times the time integral of squared cross-track error.

    The integral uses the left rectangle rule over the trajectory timestamps.
    ``lap_time`` defaults to the trajectory's time span.
    """
    traj = np.asarray(trajectory, dtype=float)
    t = traj[:, 0]
    T = float(t[-1] - t[0]) if lap_time is None else lap_time
    if gamma == 0:
        return T
    err2 = np.array([project_point(plan, x, y)[1] ** 2 for x, y in traj[:, 1:3]])
    return T + gamma * float(np.sum(err2[:-1] * np.diff(t)))


def _stationary_history(sim: Simulator) -> None:
    # the vehicle waits at the start line, so the IMU history is that of rest
    rest = np.array([0.0, 0.0, GRAVITY, 0.0, 0.0, 0.0])
    sim._imu[:] = rest
    sim._imu_count = sim.history


def run_lap(track: Track, field_: TerrainField, mode: str, target_speed: float, seed: int,
            params: ParameterSet | None = None, sim_cfg: SimConfig | None = None,
            baseline: BaselineConfig | None = None, velocity: VelocityScheduleConfig | None = None,
            gamma: float = 1.0, max_time: float | None = None) -> LapResult:
    """Drive one lap from the plan origin, resetting past any failed turn."""
    sim_cfg = sim_cfg or SimConfig()
    plan = track.plan
    L = plan.total_length
    gates = sorted(track.turn_gates, key=lambda g: g.entry_arclength)
    vel = velocity or VelocityScheduleConfig()
    vel = VelocityScheduleConfig(target_speed, vel.max_accel, vel.safety_distance_margin, sim_cfg.control_dt)
    ctl = Controller(track, mode, params, baseline or BaselineConfig(), vel)
    ctl.reset(0.0)
    p0, h0 = plan.point_at(0.0)
    sim = Simulator(field_, sim_cfg, VehicleState(float(p0[0]), float(p0[1]), h0), seed=seed)
    _stationary_history(sim)
    segs = track.boundary_segments
    max_time = max_time or 10.0 * L / target_speed + 60.0

    outcomes: list = [None] * len(gates)
    pending = 0
    progress = 0.0
    last_arc = 0.0
    history: deque = deque()
    rows, xtes = [], []
    lap_time = None
    fault = None
    try:
        while True:
            x = sim.state
            d = ctl.step(x, sim.imu_window())
            arc = d.progress_s * L
            delta = arc - last_arc
            if plan.closed and delta < -0.5 * L:
                delta += L
            progress += delta
            last_arc = arc
            rows.append((x.time, x.position_x, x.position_y, x.heading, x.linear_speed, x.yaw_rate,
                         d.u.velocity, d.u.curvature))
            xtes.append(d.cross_track)
            while pending < len(gates) and progress >= gates[pending].exit_arclength:
                outcomes[pending] = PASSED
                pending += 1
            if progress >= L:
                lap_time = x.time
                break
            if x.time > max_time:
                log.info("lap timed out at t=%.1f", x.time)
                break

            ticks, _ = sim.advance(d.u)
            failure = None
            if len(segs) and min_boundary_distance(ticks[:, :2], segs) < FOOTPRINT_RADIUS:
                failure = COLLISION
            history.append((sim.state.time, progress))
            while history and history[0][0] < sim.state.time - STUCK_WINDOW - 1e-9:
                history.popleft()
            if failure is None and len(history) > 1 and history[-1][0] - history[0][0] >= STUCK_WINDOW - 1e-9:
                if history[-1][1] - history[0][1] < STUCK_DISTANCE:
                    failure = STUCK
            if failure is None:
                continue
            if pending >= len(gates):
                log.info("failure (%s) after the last turn; lap incomplete", failure)
                break
            outcomes[pending] = failure
            restart = gates[pending].exit_arclength + RESET_PAST_EXIT
            pending += 1
            p, h = plan.point_at(restart)
            sim.reset_pose(VehicleState(float(p[0]), float(p[1]), h, time=sim.state.time))
            progress = restart
            last_arc = restart % L if plan.closed else min(restart, L)
            ctl.reset(last_arc / L)
            history.clear()
    except SimulationFault as exc:
        fault = str(exc)
        log.warning("lap faulted: %s", exc)

    outcomes = [o if o is not None else STUCK for o in outcomes]
    traj = np.array(rows)
    xte = np.array(xtes)
    J = objective_J(traj, plan, gamma, lap_time) if len(traj) > 1 else math.nan
    return LapResult(mode, target_speed, seed, lap_time, outcomes, traj,
                     float(xte.mean()) if len(xte) else math.nan,
                     float(xte.max()) if len(xte) else math.nan, J, xte,
                     faulted=fault is not None, fault=fault)


@dataclass
class BenchmarkReport:
    modes: list
    speeds: list
    turns: list
    per_cell: list      # dicts keyed by mode, speed
    per_turn: list      # dicts keyed by mode, turn
    overall: dict       # mode -> dict
    base_seed: int = 0
    laps_per_cell: int = 0
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "modes": self.modes, "speeds": self.speeds, "turns": self.turns,
            "per_cell": self.per_cell, "per_turn": self.per_turn, "overall": self.overall,
            "base_seed": self.base_seed, "laps_per_cell": self.laps_per_cell, "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkReport":
        return cls(**json.loads(text))

    def cell(self, mode: str, speed: float) -> dict:
        for c in self.per_cell:
            if c["mode"] == mode and c["speed"] == speed:
                return c
        raise KeyError((mode, speed))

    def success_rate(self, mode: str) -> float:
        return self.overall[mode]["success_rate"]


def _rates(attempts: int, failures: int) -> tuple[float, float]:
    if attempts == 0:
        return 0.0, 1.0
    fr = failures / attempts
    return fr, 1.0 - fr


def aggregate(laps: list, modes, speeds, turns, base_seed: int = 0, laps_per_cell: int = 0,
              provenance: dict | None = None) -> BenchmarkReport:
    """Pool turn attempts per (mode, speed), per (mode, turn) and per mode.

    Faulted laps are counted separately and excluded from every rate.
    """
    per_cell, per_turn, overall = [], [], {}
    for mode in modes:
        mode_laps = [lap for lap in laps if lap.mode == mode]
        ok = [lap for lap in mode_laps if not lap.faulted]
        for speed in speeds:
            cell = [lap for lap in ok if lap.target_speed == speed]
            attempts = sum(len(lap.turn_outcomes) for lap in cell)
            coll = sum(o == COLLISION for lap in cell for o in lap.turn_outcomes)
            stuck = sum(o == STUCK for lap in cell for o in lap.turn_outcomes)
            fr, sr = _rates(attempts, coll + stuck)
            xte = np.concatenate([lap.cross_track for lap in cell]) if cell else np.zeros(0)
            done = [lap.lap_time for lap in cell if lap.lap_time is not None]
            per_cell.append({
                "mode": mode, "speed": speed, "laps": len(cell),
                "faulted": sum(lap.faulted for lap in mode_laps if lap.target_speed == speed),
                "attempts": attempts, "failures": coll + stuck, "collisions": coll, "stuck": stuck,
                "failure_rate": fr, "success_rate": sr,
                "mean_cross_track": float(xte.mean()) if len(xte) else None,
                "mean_lap_time": float(np.mean(done)) if done else None,
                "mean_objective_J": float(np.mean([lap.objective_J for lap in cell])) if cell else None,
            })
        for i, label in enumerate(turns):
            outs = [lap.turn_outcomes[i] for lap in ok]
            fails = sum(o != PASSED for o in outs)
            fr, sr = _rates(len(outs), fails)
            per_turn.append({"mode": mode, "turn": label, "attempts": len(outs), "failures": fails,
                             "failure_rate": fr, "success_rate": sr})
        attempts = sum(len(lap.turn_outcomes) for lap in ok)
        fails = sum(lap.failures for lap in ok)
        fr, sr = _rates(attempts, fails)
        overall[mode] = {"laps": len(mode_laps), "faulted": len(mode_laps) - len(ok), "attempts": attempts,
                         "failures": fails, "failure_rate": fr, "success_rate": sr}
    return BenchmarkReport(list(modes), list(speeds), list(turns), per_cell, per_turn, overall,
                           base_seed, laps_per_cell, provenance or {})


def _run_task(args):
    return run_lap(*args[0], **args[1])


def run_benchmark(track: Track, field_: TerrainField, modes, speeds, laps_per_cell: int, base_seed: int = 0,
                  params: dict | None = None, sim_cfg: SimConfig | None = None, workers: int = 1,
                  provenance: dict | None = None, **lap_kwargs) -> tuple[BenchmarkReport, list]:
    """Run every (mode, speed, lap) cell; lap ``i`` uses seed ``base_seed + i``.

    ``params`` maps mode name to its ParameterSet. With ``workers > 1`` laps
    run in a process pool but are reduced in submission order, so the
    report is identical to the serial run.
    """
    params = params or {}
    tasks = []
    for mode in modes:
        for speed in speeds:
            for i in range(laps_per_cell):
                tasks.append(((track, field_, mode, speed, base_seed + i),
                              dict(params=params.get(mode), sim_cfg=sim_cfg, **lap_kwargs)))
    if workers > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(workers) as pool:
            laps = pool.map(_run_task, tasks, chunksize=1)
    else:
        laps = [_run_task(t) for t in tasks]
    turns = [g.label for g in sorted(track.turn_gates, key=lambda g: g.entry_arclength)]
    report = aggregate(laps, list(modes), list(speeds), turns, base_seed, laps_per_cell, provenance)
    return report, laps


def export_report(report: BenchmarkReport, laps: list, out_dir) -> Path:
    """Write report.json, per-figure CSV tables and one trajectory CSV per lap."""
    if not laps:
        raise ValueError("no laps to export")
    out = Path(out_dir)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    with open(out / "failure_by_speed.csv", "w") as fh:
        fh.write("mode,speed,attempts,failures,failure_rate,success_rate,mean_cross_track\n")
        for c in report.per_cell:
            fh.write(f"{c['mode']},{c['speed']},{c['attempts']},{c['failures']},{c['failure_rate']!r},"
                     f"{c['success_rate']!r},{c['mean_cross_track']!r}\n")
    with open(out / "failure_by_turn.csv", "w") as fh:
        fh.write("mode,turn,attempts,failures,failure_rate,success_rate\n")
        for c in report.per_turn:
            fh.write(f"{c['mode']},{c['turn']},{c['attempts']},{c['failures']},{c['failure_rate']!r},"
                     f"{c['success_rate']!r}\n")
    counters: dict = {}
    for lap in laps:
        key = (lap.mode, lap.target_speed)
        idx = counters.get(key, 0)
        counters[key] = idx + 1
        write_trajectory_csv(out / "trajectories" / f"{lap.mode}_{lap.target_speed:.2f}_{idx:02d}.csv", lap.trajectory)
    return out
