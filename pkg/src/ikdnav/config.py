"""YAML loading for track/terrain files and run configurations.

Track file schema (all lengths in meters)::

    name: backyard
    plan:
      closed: true
      corner_radius: 1.0          # optional fillet applied to every corner
      waypoints: [[x, y], ...]
    corridor_half_width: 0.8      # optional: derive boundaries from the plan
    boundaries:                   # optional explicit polylines
      - [[x, y], ...]
    gates:                        # per-turn entry/exit segments
      - {label: T1, entry: [[x, y], [x, y]], exit: [[x, y], [x, y]]}
      - {label: T2, entry_at: 20.0, exit_at: 26.5}   # or arclength positions
    terrain:
      nominal: {grip: 1.0, roughness: 0.0, drag: 0.0}
      patches:
        - {name: grass, grip: 0.9, roughness: 0.15, drag: 0.5, boundary: [[x, y], ...]}
    arena: [xmin, ymin, xmax, ymax]   # exploration area for data collection
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml
from shapely.geometry import LineString, LinearRing

from .geometry import polygon_is_simple
from .nn import TrainConfig
from .plan import GlobalPlan, Track, TurnGate, gate_crossings
from .sim import SimConfig, TerrainField, TerrainParams, TerrainPatch

RESOURCES = Path(__file__).parent / "resources"


class ConfigError(ValueError):
    """A configuration file violates its schema; ``diagnostics`` lists every problem."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


def resolve_resource(path) -> Path:
    """Existing path as given, else a bundled resource of that name."""
    p = Path(path)
    if p.exists():
        return p
    for cand in (RESOURCES / p, RESOURCES / f"{p}.yaml"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no such file: {path}")


@dataclass
class TrackBundle:
    track: Track
    terrain: TerrainField
    arena: tuple | None
    name: str
    source: str = ""


def _corridor(plan: GlobalPlan, half_width: float) -> list:
    pts = np.vstack([plan._verts])
    if plan.closed:
        ring = LinearRing(pts[:-1])
        poly = ring.buffer(half_width, join_style="round", quad_segs=8)
        lines = [list(poly.exterior.coords)] + [list(r.coords) for r in poly.interiors]
    else:
        line = LineString(pts)
        lines = [list(line.offset_curve(half_width).coords), list(line.offset_curve(-half_width).coords)]
    return [[(float(x), float(y)) for x, y in ln] for ln in lines]


def _gate_at(plan: GlobalPlan, arclength: float, half: float):
    p, h = plan.point_at(arclength)
    nx, ny = -np.sin(h) * half, np.cos(h) * half
    return ((float(p[0] - nx), float(p[1] - ny)), (float(p[0] + nx), float(p[1] + ny)))


def _terrain(doc: dict, diags: list) -> TerrainField:
    tdoc = doc.get("terrain") or {}
    try:
        nominal = TerrainParams(**(tdoc.get("nominal") or {}))
    except (TypeError, ValueError) as exc:
        diags.append(f"terrain.nominal: {exc}")
        nominal = TerrainParams()
    patches = []
    for i, pd in enumerate(tdoc.get("patches") or []):
        name = pd.get("name", f"patch{i}")
        boundary = pd.get("boundary") or []
        if len(boundary) < 3:
            diags.append(f"patch {name!r}: boundary needs at least 3 vertices")
            continue
        if not polygon_is_simple(boundary):
            diags.append(f"patch {name!r}: boundary polygon self-intersects")
            continue
        try:
            params = TerrainParams(pd.get("grip", 1.0), pd.get("roughness", 0.0), pd.get("drag", 0.0))
        except ValueError as exc:
            diags.append(f"patch {name!r}: {exc}")
            continue
        patches.append(TerrainPatch(tuple(map(tuple, boundary)), params, name))
    return TerrainField(tuple(patches), nominal)


def parse_track(doc: dict, source: str = "") -> tuple[TrackBundle | None, list]:
    """Build a track bundle, collecting diagnostics instead of stopping at the first problem."""
    diags: list = []
    name = doc.get("name", Path(source).stem if source else "track")
    pdoc = doc.get("plan") or {}
    plan = None
    try:
        plan = GlobalPlan.from_waypoints(pdoc.get("waypoints") or [], bool(pdoc.get("closed", False)),
                                         float(pdoc.get("corner_radius", 0.0)))
        if np.any(np.diff(plan._cum) <= 0):
            diags.append("plan: cumulative arclength is not strictly increasing")
    except ValueError as exc:
        diags.append(f"plan: {exc}")
    terrain = _terrain(doc, diags)
    if plan is None:
        return None, diags

    boundaries = [list(map(tuple, b)) for b in doc.get("boundaries") or []]
    hw = doc.get("corridor_half_width")
    if hw is not None:
        boundaries += _corridor(plan, float(hw))
    for i, b in enumerate(boundaries):
        if len(b) < 2:
            diags.append(f"boundary {i}: needs at least 2 vertices")

    gate_half = float(hw) + 0.1 if hw is not None else 1.0
    gates = []
    for i, gd in enumerate(doc.get("gates") or []):
        label = gd.get("label", f"T{i + 1}")
        if "entry_at" in gd:
            entry = _gate_at(plan, float(gd["entry_at"]), gate_half)
            exit_ = _gate_at(plan, float(gd["exit_at"]), gate_half)
        else:
            entry, exit_ = tuple(map(tuple, gd["entry"])), tuple(map(tuple, gd["exit"]))
        ok = True
        arcs = []
        for which, seg in (("entry", entry), ("exit", exit_)):
            hits = gate_crossings(plan, seg)
            if len(hits) != 1:
                diags.append(f"gate {label} {which}: crosses the plan {len(hits)} times (need exactly 1)")
                ok = False
            else:
                arcs.append(hits[0])
        if ok:
            if arcs[1] <= arcs[0]:
                diags.append(f"gate {label}: exit does not follow entry along the plan")
            gates.append(TurnGate(label, entry, exit_))
    if not diags:
        track = Track.build(plan, boundaries, gates, name)
        tg = sorted(track.turn_gates, key=lambda g: g.entry_arclength)
        for a, b in zip(tg, tg[1:]):
            if b.entry_arclength < a.exit_arclength:
                diags.append(f"gates {a.label} and {b.label} overlap along the plan")
        if track.boundary_segments.size:
            from .geometry import min_boundary_distance
            if min_boundary_distance(plan._verts, track.boundary_segments) < 1e-6:
                diags.append("plan touches a track boundary")
        arena = tuple(doc["arena"]) if doc.get("arena") else None
        return TrackBundle(track, terrain, arena, name, source), diags
    return None, diags


def load_track(path) -> TrackBundle:
    path = resolve_resource(path)
    doc = yaml.safe_load(Path(path).read_text())
    bundle, diags = parse_track(doc, str(path))
    if diags:
        raise ConfigError(diags)
    return bundle


def validate_track_file(path) -> list:
    try:
        doc = yaml.safe_load(Path(resolve_resource(path)).read_text())
    except (OSError, yaml.YAMLError) as exc:
        return [f"cannot read {path}: {exc}"]
    _, diags = parse_track(doc, str(path))
    return diags


def _from_dict(cls, d):
    names = {f.name for f in fields(cls) if f.init}
    unknown = set(d or {}) - names
    if unknown:
        raise ConfigError([f"{cls.__name__}: unknown keys {sorted(unknown)}"])
    return cls(**(d or {}))


@dataclass
class RunConfig:
    """Everything one pipeline run needs; relative paths resolve against the config file."""

    track: str
    eval_tracks: list = field(default_factory=list)
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    H: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 4.0]])
    collect_duration: float = 600.0
    policy: dict = field(default_factory=dict)
    modes: list = field(default_factory=lambda: ["baseline", "ablated", "learned"])
    speeds: list = field(default_factory=lambda: [1.6, 1.8, 2.0, 2.2, 2.4])
    laps_per_cell: int = 4
    velocity: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    dataset: str | None = None
    params: str | None = None
    ablated_params: str | None = None
    base_dir: str = "."
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    def path(self, p) -> Path:
        """Absolute paths as given; relative ones against the config file, then cwd, then resources."""
        q = Path(p)
        if q.is_absolute():
            return q
        cand = Path(self.base_dir) / q
        if cand.exists():
            return cand
        try:
            return resolve_resource(q)
        except FileNotFoundError:
            return cand

    def with_seed(self, seed: int) -> "RunConfig":
        """Same run with every seed replaced; the hash follows the override."""
        raw = dict(self.raw, seed=int(seed))
        policy = {k: v for k, v in self.policy.items() if k != "rng_seed"}
        return replace(self, seed=int(seed), policy=policy, sim=replace(self.sim, rng_seed=int(seed)),
                       train=replace(self.train, rng_seed=int(seed)), raw=raw)


def load_run_config(path) -> RunConfig:
    path = resolve_resource(path)
    doc = yaml.safe_load(Path(path).read_text()) or {}
    if "track" not in doc:
        raise ConfigError(["run config: missing 'track'"])
    seed = int(doc.get("seed", 0))
    sim = dict(doc.get("sim") or {})
    sim.setdefault("rng_seed", seed)
    train = dict(doc.get("train") or {})
    train.setdefault("rng_seed", seed)
    H = train.pop("H", [[1.0, 0.0], [0.0, 4.0]])
    col = doc.get("collect") or {}
    bench = doc.get("bench") or {}
    cfg = RunConfig(
        track=doc["track"],
        eval_tracks=list(bench.get("tracks") or [doc["track"]]),
        seed=seed,
        sim=_from_dict(SimConfig, sim),
        train=_from_dict(TrainConfig, train),
        H=H,
        collect_duration=float(col.get("duration", 600.0)),
        policy=dict(col.get("policy") or {}),
        modes=list(bench.get("modes") or ["baseline", "ablated", "learned"]),
        speeds=[float(s) for s in bench.get("speeds") or [1.6, 1.8, 2.0, 2.2, 2.4]],
        laps_per_cell=int(bench.get("laps", 4)),
        velocity=dict(bench.get("velocity") or {}),
        baseline=dict(bench.get("baseline") or {}),
        dataset=doc.get("dataset"),
        params=doc.get("params"),
        ablated_params=doc.get("ablated_params"),
        base_dir=str(Path(path).parent),
        raw=doc,
    )
    missing = [t for t in [cfg.track] + cfg.eval_tracks if not _exists(cfg, t)]
    if missing:
        raise ConfigError([f"referenced file not found: {m}" for m in missing])
    return cfg


def _exists(cfg: RunConfig, p) -> bool:
    try:
        return cfg.path(p).exists()
    except FileNotFoundError:
        return False
