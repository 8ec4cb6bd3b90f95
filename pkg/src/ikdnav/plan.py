"""Global plans, the projection operator and receding-horizon carrot targets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import polylines_to_segments, segments_intersect, wrap_angle
from .sim import VehicleState

DENSIFY_STEP = 0.05
PROJECTION_WINDOW = 5.0


def fillet(points: Sequence[Sequence[float]], radius: float, closed: bool, step: float = DENSIFY_STEP) -> list:
    """Round every corner of a polyline with a tangent circular arc.

    A waypoint given as (x, y, r) overrides ``radius`` at that corner. The
    radius shrinks locally when the adjacent segments are too short to hold
    the tangent points.
    """
    radii = [float(p[2]) if len(p) > 2 else radius for p in points]
    pts = [np.asarray(p[:2], dtype=float) for p in points]
    n = len(pts)
    if n < 3:
        return [tuple(p) for p in pts]
    corners = range(n) if closed else range(1, n - 1)
    out = []
    if not closed:
        out.append(tuple(pts[0]))
    for i in corners:
        prev, cur, nxt = pts[(i - 1) % n], pts[i], pts[(i + 1) % n]
        a, b = cur - prev, nxt - cur
        la, lb = np.hypot(*a), np.hypot(*b)
        da, db = a / la, b / lb
        turn = math.atan2(da[0] * db[1] - da[1] * db[0], float(da @ db))
        if abs(turn) < 1e-9 or radii[i] <= 0:
            out.append(tuple(cur))
            continue
        t = radii[i] * math.tan(abs(turn) / 2)
        t = min(t, 0.5 * la, 0.5 * lb)
        r = t / math.tan(abs(turn) / 2)
        p0 = cur - da * t
        sgn = 1.0 if turn > 0 else -1.0
        normal = np.array([-da[1], da[0]]) * sgn
        center = p0 + normal * r
        start = math.atan2(p0[1] - center[1], p0[0] - center[0])
        n_arc = max(2, int(math.ceil(abs(turn) * r / step)) + 1)
        for k in range(n_arc):
            ang = start + sgn * abs(turn) * k / (n_arc - 1)
            out.append((center[0] + r * math.cos(ang), center[1] + r * math.sin(ang)))
    if not closed:
        out.append(tuple(pts[-1]))
    # drop duplicates produced by tangent points meeting mid-segment
    dedup = [out[0]]
    for p in out[1:]:
        if math.hypot(p[0] - dedup[-1][0], p[1] - dedup[-1][1]) > 1e-9:
            dedup.append(p)
    if closed and math.hypot(dedup[0][0] - dedup[-1][0], dedup[0][1] - dedup[-1][1]) <= 1e-9:
        dedup.pop()
    return dedup


def densify(points: Sequence[Sequence[float]], closed: bool, max_step: float = DENSIFY_STEP) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if closed:
        pts = np.vstack([pts, pts[:1]])
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / max_step)))
        for k in range(1, n + 1):
            out.append(a + (b - a) * (k / n))
    out = np.array(out)
    return out[:-1] if closed else out


@dataclass(frozen=True)
class GlobalPlan:
    """Piecewise-linear plan. For closed plans the last waypoint connects back to the first."""

    waypoints: np.ndarray
    cumulative_arclength: np.ndarray
    closed: bool
    total_length: float
    # vertices including the closing vertex, and their arclengths
    _verts: np.ndarray = field(repr=False, compare=False, default=None)
    _cum: np.ndarray = field(repr=False, compare=False, default=None)

    @classmethod
    def from_waypoints(cls, points, closed: bool = False, corner_radius: float = 0.0,
                       max_step: float = DENSIFY_STEP) -> "GlobalPlan":
        raw = [list(map(float, p)) for p in points]
        if len(raw) < 2 or any(len(p) not in (2, 3) for p in raw):
            raise ValueError("a plan needs at least 2 waypoints of the form [x, y] or [x, y, radius]")
        pts = np.asarray([p[:2] for p in raw])
        if np.any(np.hypot(*np.diff(pts, axis=0).T) <= 0):
            raise ValueError("consecutive plan waypoints must be distinct")
        if corner_radius > 0 or any(len(p) == 3 for p in raw):
            pts = np.asarray(fillet(raw, corner_radius, closed, max_step))
        if max_step:
            pts = densify(pts, closed, max_step)
        return cls.from_dense(pts, closed)

    @classmethod
    def from_dense(cls, pts, closed: bool) -> "GlobalPlan":
        pts = np.asarray(pts, dtype=float)
        verts = np.vstack([pts, pts[:1]]) if closed else pts
        seg = np.hypot(*np.diff(verts, axis=0).T)
        if np.any(seg <= 0):
            raise ValueError("consecutive plan waypoints must be distinct")
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return cls(pts, cum[: len(pts)], closed, float(cum[-1]), verts, cum)

    def point_at(self, arclength: float) -> tuple[np.ndarray, float]:
        """Plan point and tangent heading at an arclength (wrapped or clamped)."""
        L = self.total_length
        a = arclength % L if self.closed else min(max(arclength, 0.0), L)
        i = int(np.searchsorted(self._cum, a, side="right")) - 1
        i = min(max(i, 0), len(self._verts) - 2)
        p0, p1 = self._verts[i], self._verts[i + 1]
        seglen = self._cum[i + 1] - self._cum[i]
        t = (a - self._cum[i]) / seglen
        d = p1 - p0
        return p0 + t * d, math.atan2(d[1], d[0])

    def arclength_of(self, s: float) -> float:
        return s * self.total_length

    @property
    def segments(self) -> np.ndarray:
        return np.hstack([self._verts[:-1], self._verts[1:]])


def _nearest_on_segments(plan: GlobalPlan, px: float, py: float, idx: np.ndarray,
                         base: np.ndarray | float = 0.0, lo: float = -math.inf, hi: float = math.inf):
    """Nearest points on segments ``idx`` restricted to unwrapped arclength [lo, hi]."""
    a = plan._verts[idx]
    d = plan._verts[idx + 1] - a
    seglen = np.hypot(d[:, 0], d[:, 1])
    seg0 = plan._cum[idx] + base
    t_lo = np.clip((lo - seg0) / seglen, 0.0, 1.0)
    t_hi = np.clip((hi - seg0) / seglen, 0.0, 1.0)
    t = ((px - a[:, 0]) * d[:, 0] + (py - a[:, 1]) * d[:, 1]) / (seglen * seglen)
    t = np.minimum(np.maximum(t, t_lo), t_hi)
    cx = a[:, 0] + t * d[:, 0]
    cy = a[:, 1] + t * d[:, 1]
    return np.hypot(cx - px, cy - py), seg0 + t * seglen, cx, cy


def project_point(plan: GlobalPlan, px: float, py: float, previous_s: float | None = None,
                  window: float = PROJECTION_WINDOW) -> tuple[float, float, float, float]:
    """Nearest plan point to (px, py); returns (arclength, distance, cx, cy).

    With ``previous_s`` the search only covers arclength
    [previous, previous + window], wrapping on closed plans. Ties go to the
    larger arclength in [0, total_length).
    """
    L = plan.total_length
    nseg = len(plan._verts) - 1
    if previous_s is None:
        dist, arc, cx, cy = _nearest_on_segments(plan, px, py, np.arange(nseg))
    else:
        start = previous_s * L
        if plan.closed:
            start %= L
            end = start + min(window, L - 1e-9)
        else:
            start = min(max(start, 0.0), L)
            end = min(start + window, L)
        first = min(max(int(np.searchsorted(plan._cum, start, side="right")) - 1, 0), nseg - 1)
        if end > L:
            last = nseg + int(np.searchsorted(plan._cum, end - L, side="left"))
        else:
            last = int(np.searchsorted(plan._cum, end, side="left"))
        ks = np.arange(first, max(last, first + 1))
        base = np.where(ks >= nseg, L, 0.0)
        ks = ks % nseg
        dist, arc, cx, cy = _nearest_on_segments(plan, px, py, ks, base, start, end)
    if plan.closed:
        arc = arc % L
    dmin = dist.min()
    tied = np.nonzero(dist <= dmin + 1e-12)[0]
    j = tied[np.argmax(arc[tied])]
    return float(arc[j]), float(dist[j]), float(cx[j]), float(cy[j])


def project(plan: GlobalPlan, x: VehicleState, previous_s: float | None = None,
            window: float = PROJECTION_WINDOW) -> float:
    """Progress s in [0, 1] of the plan point nearest to the robot."""
    a, *_ = project_point(plan, x.position_x, x.position_y, previous_s, window)
    s = a / plan.total_length
    return s % 1.0 if plan.closed else min(max(s, 0.0), 1.0)


def cross_track_error(plan: GlobalPlan, px: float, py: float) -> float:
    _, d, _, _ = project_point(plan, px, py)
    return d


@dataclass(frozen=True)
class CarrotTarget:
    target_point: tuple[float, float]
    delta_x: tuple[float, float, float]
    progress_s: float


def world_to_robot(x: VehicleState, point, heading: float) -> tuple[float, float, float]:
    ox, oy = point[0] - x.position_x, point[1] - x.position_y
    c, s = math.cos(x.heading), math.sin(x.heading)
    return c * ox + s * oy, -s * ox + c * oy, wrap_angle(heading - x.heading)


def carrot(plan: GlobalPlan, s: float, x: VehicleState, lookahead: float = 1.0) -> CarrotTarget:
    L = plan.total_length
    a = s * L + lookahead
    a = a % L if plan.closed else min(a, L)
    p, h = plan.point_at(a)
    return CarrotTarget((float(p[0]), float(p[1])), world_to_robot(x, p, h), a / L)


@dataclass(frozen=True)
class TurnGate:
    label: str
    entry: tuple[tuple[float, float], tuple[float, float]]
    exit: tuple[tuple[float, float], tuple[float, float]]
    entry_arclength: float = 0.0
    exit_arclength: float = 0.0


def gate_crossings(plan: GlobalPlan, seg) -> list[float]:
    """Arclengths where a gate segment crosses the plan (merged within 1 mm)."""
    (gx0, gy0), (gx1, gy1) = seg
    segs = plan.segments
    hits = []
    ex, ey = gx1 - gx0, gy1 - gy0
    for i, (ax, ay, bx, by) in enumerate(segs):
        if not segments_intersect((ax, ay), (bx, by), (gx0, gy0), (gx1, gy1)):
            continue
        dx, dy = bx - ax, by - ay
        den = dx * ey - dy * ex
        if abs(den) < 1e-15:
            t = 0.0
        else:
            t = ((gx0 - ax) * ey - (gy0 - ay) * ex) / den
        t = min(max(t, 0.0), 1.0)
        hits.append(plan._cum[i] + t * math.hypot(dx, dy))
    hits.sort()
    merged = []
    L = plan.total_length
    for h in hits:
        if merged and abs(h - merged[-1]) < 1e-3:
            continue
        merged.append(h)
    if plan.closed and len(merged) > 1 and L - merged[-1] + merged[0] < 1e-3:
        merged.pop()
    return merged


@dataclass(frozen=True)
class Track:
    plan: GlobalPlan
    boundaries: tuple = ()
    turn_gates: tuple[TurnGate, ...] = ()
    name: str = ""
    boundary_segments: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        segs = polylines_to_segments(self.boundaries)
        object.__setattr__(self, "boundary_segments", segs)

    @classmethod
    def build(cls, plan: GlobalPlan, boundaries, gates, name: str = "") -> "Track":
        """Resolve gate arclengths; raises ValueError naming the offending gate."""
        resolved = []
        for g in gates:
            arcs = []
            for which in ("entry", "exit"):
                hits = gate_crossings(plan, getattr(g, which))
                if len(hits) != 1:
                    raise ValueError(f"gate {g.label} {which} segment crosses the plan {len(hits)} times (need exactly 1)")
                arcs.append(hits[0])
            resolved.append(TurnGate(g.label, g.entry, g.exit, arcs[0], arcs[1]))
        return cls(plan, tuple(tuple(map(tuple, b)) for b in boundaries), tuple(resolved), name)
