"""Exploration data collection, label construction and dataset storage."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import wrap_angle
from .nn import WINDOW_DIM, WINDOW_LEN
from .sim import MAX_CURVATURE, MAX_SPEED, ControlInput, SimConfig, Simulator, TerrainField, VehicleState

DATA_MAGIC = b"IKDDATA\x00"
DATA_VERSION = 1
V_MIN_LABEL = 0.2
CHANNEL_NAMES = ("accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z")


class DatasetFormatError(ValueError):
    pass


class CollectionError(ValueError):
    pass


def terrain_hash(field_: TerrainField) -> str:
    desc = {
        "nominal": [field_.nominal.grip, field_.nominal.roughness, field_.nominal.drag],
        "patches": [[list(map(list, p.boundary)), p.params.grip, p.params.roughness, p.params.drag]
                    for p in field_.patches],
    }
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ExplorationPolicy:
    """Scripted stand-in for random joystick exploration.

    Velocity and curvature each follow a reflected Gaussian random walk,
    re-drawn every ``dwell`` seconds. When ``arena`` (xmin, ymin, xmax, ymax)
    is set and the vehicle leaves it heading outward, curvature is forced to
    full lock toward the arena center until it points back inside.
    """

    rng_seed: int = 0
    v_range: tuple[float, float] = (0.0, MAX_SPEED)
    c_range: tuple[float, float] = (-MAX_CURVATURE, MAX_CURVATURE)
    dwell: float = 0.5
    v_step: float = 0.3
    c_step: float = 0.9
    arena: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        self._rng = np.random.default_rng(self.rng_seed)
        self._next_change = 0.0
        self._v = float(self._rng.uniform(*self.v_range))
        self._c = float(self._rng.uniform(*self.c_range))

    @staticmethod
    def _reflect(x, lo, hi):
        if hi <= lo:
            return lo
        span = hi - lo
        y = (x - lo) % (2 * span)
        return lo + (y if y <= span else 2 * span - y)

    def command(self, t: float, state: VehicleState) -> ControlInput:
        if t + 1e-9 >= self._next_change:
            self._v = self._reflect(self._v + self._rng.normal(0, self.v_step), *self.v_range)
            self._c = self._reflect(self._c + self._rng.normal(0, self.c_step), *self.c_range)
            self._next_change += self.dwell
        c = self._c
        if self.arena is not None:
            x0, y0, x1, y1 = self.arena
            px, py = state.position_x, state.position_y
            if not (x0 <= px <= x1 and y0 <= py <= y1):
                to_center = math.atan2(0.5 * (y0 + y1) - py, 0.5 * (x0 + x1) - px)
                err = wrap_angle(to_center - state.heading)
                if abs(err) > math.pi / 4:
                    c = math.copysign(self.c_range[1], err)
        return ControlInput(self._v, c)


@dataclass(frozen=True)
class TrainingSample:
    v_r: float
    c_r: float
    v_cmd: float
    c_cmd: float
    window: np.ndarray
    time: float


@dataclass
class Dataset:
    """Columnar storage: 604 float32 values per sample plus a float64 timestamp."""

    inputs: np.ndarray   # (N, 2) realized v_r, c_r
    labels: np.ndarray   # (N, 2) commanded v_cmd, c_cmd
    windows: np.ndarray  # (N, 600) channel-major IMU history
    time: np.ndarray     # (N,)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=np.float32).reshape(-1, 2)
        self.windows = np.asarray(self.windows, dtype=np.float32).reshape(-1, WINDOW_DIM)
        self.time = np.asarray(self.time, dtype=np.float64).reshape(-1)
        n = len(self.time)
        if not (len(self.inputs) == len(self.labels) == len(self.windows) == n):
            raise ValueError("dataset columns have different lengths")

    def __len__(self) -> int:
        return len(self.time)

    def __getitem__(self, i: int) -> TrainingSample:
        return TrainingSample(float(self.inputs[i, 0]), float(self.inputs[i, 1]), float(self.labels[i, 0]),
                              float(self.labels[i, 1]), self.windows[i], float(self.time[i]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.inputs[idx], self.labels[idx], self.windows[idx], self.time[idx], dict(self.provenance))

    @classmethod
    def empty(cls, provenance=None) -> "Dataset":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, WINDOW_DIM)), np.zeros(0), provenance or {})

    @classmethod
    def concat(cls, parts) -> "Dataset":
        parts = list(parts)
        prov = {"parts": [p.provenance for p in parts]}
        return cls(np.concatenate([p.inputs for p in parts]), np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.windows for p in parts]), np.concatenate([p.time for p in parts]), prov)

    def equals(self, other: "Dataset") -> bool:
        return (np.array_equal(self.inputs, other.inputs) and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.windows, other.windows) and np.array_equal(self.time, other.time)
                and self.provenance == other.provenance)


def flatten_window(window: np.ndarray) -> np.ndarray:
    """(100, 6) oldest-first samples -> 600-vector, one 100-block per channel."""
    return np.ascontiguousarray(np.asarray(window).T).reshape(WINDOW_DIM)


def align(u: ControlInput, tick_states: np.ndarray, tick_imu: np.ndarray, window: np.ndarray, t: float,
          v_min_label: float = V_MIN_LABEL) -> TrainingSample | None:
    """Build one sample from a command held over the label horizon.

    ``tick_states`` rows are (x, y, actuator_speed, time) and ``tick_imu``
    rows the readings at the IMU instants inside (t, t + horizon]. Wheel
    odometry reads the pre-slip actuator speed. Returns None when v_r falls
    below the label threshold.
    """
    v_r = float(np.mean(tick_states[:, 2]))
    if v_r < v_min_label:
        return None
    c_r = float(np.mean(tick_imu[:, 5])) / v_r
    return TrainingSample(v_r, c_r, u.velocity, u.curvature, flatten_window(window), t)


def collect(field_: TerrainField, cfg: SimConfig, policy: ExplorationPolicy, duration: float,
            v_min_label: float = V_MIN_LABEL, start: VehicleState | None = None) -> Dataset:
    """Drive the exploration policy and record one sample per control step."""
    n_steps = int(round(duration / cfg.control_dt))
    warmup = int(math.ceil(WINDOW_LEN / cfg.imu_per_control))
    if n_steps <= warmup:
        raise CollectionError(
            f"duration {duration}s is too short: need more than {warmup * cfg.control_dt:.2f}s for one IMU window")
    if start is None and policy.arena is not None:
        x0, y0, x1, y1 = policy.arena
        start = VehicleState(0.5 * (x0 + x1), 0.5 * (y0 + y1))
    sim = Simulator(field_, cfg, start, history=WINDOW_LEN)
    ins, labs, wins, times = [], [], [], []
    for k in range(n_steps):
        t = k * cfg.control_dt
        u = policy.command(t, sim.state)
        window = sim.imu_window() if sim.imu_count >= WINDOW_LEN else None
        states, readings = sim.advance(u)
        if window is None:
            continue
        sample = align(u, states, readings, window, t, v_min_label)
        if sample is None:
            continue
        ins.append((sample.v_r, sample.c_r))
        labs.append((sample.v_cmd, sample.c_cmd))
        wins.append(sample.window)
        times.append(t)
    prov = {
        "terrain_hash": terrain_hash(field_),
        "sim_seed": cfg.rng_seed,
        "policy_seed": policy.rng_seed,
        "duration": duration,
        "control_dt": cfg.control_dt,
        "label_horizon": cfg.control_dt,
        "v_min_label": v_min_label,
        "window_layout": "channel-major:" + ",".join(CHANNEL_NAMES),
    }
    if not times:
        return Dataset.empty(prov)
    return Dataset(np.array(ins), np.array(labs), np.array(wins), np.array(times), prov)


def split(dataset: Dataset, validation_fraction: float, seed: int = 0,
          window_span: float = WINDOW_LEN * 0.005) -> tuple[Dataset, Dataset]:
    """Contiguous time-block split.

    The validation block start is drawn from ``seed``. Training samples
    whose observation window would overlap a validation window in time
    (within ``window_span`` of the block) are dropped.
    """
    n = len(dataset)
    n_val = int(round(validation_fraction * n))
    if n_val == 0:
        return dataset.subset(np.arange(n)), dataset.subset([])
    start = int(np.random.default_rng(seed).integers(0, n - n_val + 1))
    val_idx = np.arange(start, start + n_val)
    t = dataset.time
    t0, t1 = t[start], t[start + n_val - 1]
    rest = np.setdiff1d(np.arange(n), val_idx)
    keep = rest[(t[rest] <= t0 - window_span) | (t[rest] >= t1 + window_span)]
    return dataset.subset(keep), dataset.subset(val_idx)


def coverage(values, lo: float, hi: float, bins: int = 20) -> float:
    """Fraction of equal-width bins over [lo, hi] that contain at least one value."""
    hist, _ = np.histogram(np.asarray(values), bins=bins, range=(lo, hi))
    return float(np.count_nonzero(hist)) / bins


def save(dataset: Dataset, path) -> None:
    """Layout: magic, u16 version, u64 N, N*604 float32 rows, N float64 times, u32 + JSON provenance."""
    rows = np.hstack([dataset.inputs, dataset.labels, dataset.windows]).astype("<f4")
    prov = json.dumps(dataset.provenance, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        fh.write(struct.pack("<HQ", DATA_VERSION, len(dataset)))
        fh.write(rows.tobytes())
        fh.write(dataset.time.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(prov)))
        fh.write(prov)


def load(path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:8] != DATA_MAGIC:
        raise DatasetFormatError(f"{path}: not a dataset file (bad magic)")
    version, n = struct.unpack_from("<HQ", data, 8)
    if version != DATA_VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset version {version}")
    off = 18
    width = 4 + WINDOW_DIM
    rows = np.frombuffer(data, "<f4", n * width, off).reshape(n, width)
    off += 4 * n * width
    times = np.frombuffer(data, "<f8", n, off)
    off += 8 * n
    (plen,) = struct.unpack_from("<I", data, off)
    prov = json.loads(data[off + 4: off + 4 + plen])
    return Dataset(rows[:, 0:2], rows[:, 2:4], rows[:, 4:], times, prov)


def export_csv(dataset: Dataset, path) -> None:
    header = ["time", "v_r", "c_r", "v_cmd", "c_cmd"]
    header += [f"{ch}_{i:02d}" for ch in CHANNEL_NAMES for i in range(WINDOW_LEN)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(dataset)):
            vals = [repr(float(dataset.time[i]))]
            vals += [repr(float(v)) for v in dataset.inputs[i]]
            vals += [repr(float(v)) for v in dataset.labels[i]]
            vals += [repr(float(v)) for v in dataset.windows[i]]
            fh.write(",".join(vals) + "\n")

