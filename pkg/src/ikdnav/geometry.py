"""Planar geometry helpers shared by the simulator, planner and evaluator."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


def _orient(ax, ay, bx, by, cx, cy):
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if v > 1e-12:
        return 1
    if v < -1e-12:
        return -1
    return 0


def _on_segment(ax, ay, bx, by, px, py):
    return min(ax, bx) - 1e-12 <= px <= max(ax, bx) + 1e-12 and min(ay, by) - 1e-12 <= py <= max(ay, by) + 1e-12


def segments_intersect(p1, p2, q1, q2) -> bool:
    """True if closed segments p1-p2 and q1-q2 share at least one point."""
    o1 = _orient(*p1, *p2, *q1)
    o2 = _orient(*p1, *p2, *q2)
    o3 = _orient(*q1, *q2, *p1)
    o4 = _orient(*q1, *q2, *p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(*p1, *p2, *q1):
        return True
    if o2 == 0 and _on_segment(*p1, *p2, *q2):
        return True
    if o3 == 0 and _on_segment(*q1, *q2, *p1):
        return True
    if o4 == 0 and _on_segment(*q1, *q2, *p2):
        return True
    return False


def polygon_is_simple(vertices) -> bool:
    """Check a closed polygon (implicit closing edge) for self-intersection."""
    pts = [tuple(map(float, v)) for v in vertices]
    n = len(pts)
    if n < 3:
        return False
    for i in range(n):
        if pts[i] == pts[(i + 1) % n]:
            return False
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if segments_intersect(a1, a2, pts[j], pts[(j + 1) % n]):
                return False
    return True


def point_in_polygon(px: float, py: float, vertices) -> bool:
    """Even-odd test; points on the boundary count as inside."""
    n = len(vertices)
    inside = False
    x0, y0 = vertices[-1]
    for i in range(n):
        x1, y1 = vertices[i]
        # boundary check: collinear and within the edge's box
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        if abs(cross) <= 1e-12 and min(x0, x1) <= px <= max(x0, x1) and min(y0, y1) <= py <= max(y0, y1):
            return True
        if (y1 > py) != (y0 > py):
            xi = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            if px < xi:
                inside = not inside
        x0, y0 = x1, y1
    return inside


def polylines_to_segments(polylines) -> np.ndarray:
    """Stack polylines into an (M, 4) array of segments [ax, ay, bx, by]."""
    segs = []
    for line in polylines:
        arr = np.asarray(line, dtype=float)
        if len(arr) < 2:
            continue
        segs.append(np.hstack([arr[:-1], arr[1:]]))
    if not segs:
        return np.zeros((0, 4))
    return np.vstack(segs)


def point_segment_distance(px: float, py: float, segs: np.ndarray) -> np.ndarray:
    """Distances from a point to every segment in an (M, 4) array."""
    ax, ay, bx, by = segs[:, 0], segs[:, 1], segs[:, 2], segs[:, 3]
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = np.where(L2 > 0, ((px - ax) * dx + (py - ay) * dy) / np.where(L2 > 0, L2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    cx, cy = ax + t * dx - px, ay + t * dy - py
    return np.sqrt(cx * cx + cy * cy)


def min_boundary_distance(points: np.ndarray, segs: np.ndarray) -> float:
    """Smallest distance from any of the (n, 2) points to any segment."""
    p = np.asarray(points, dtype=float)[:, None, :]
    a = segs[None, :, :2]
    d = segs[None, :, 2:] - segs[None, :, :2]
    L2 = np.maximum(np.sum(d * d, axis=2), 1e-300)
    t = np.clip(np.sum((p - a) * d, axis=2) / L2, 0.0, 1.0)
    c = a + t[..., None] * d - p
    return float(np.sqrt(np.min(np.sum(c * c, axis=2))))


def ray_cast(px: float, py: float, heading: float, segs: np.ndarray, max_range: float = 1e3) -> float:
    """Distance along a ray to the first segment hit, or max_range."""
    if len(segs) == 0:
        return max_range
    ux, uy = math.cos(heading), math.sin(heading)
    ax, ay = segs[:, 0] - px, segs[:, 1] - py
    ex, ey = segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1]
    denom = ux * ey - uy * ex
    ok = np.abs(denom) > 1e-12
    safe = np.where(ok, denom, 1.0)
    t = (ax * ey - ay * ex) / safe  # along ray
    w = (ax * uy - ay * ux) / safe  # along segment
    hit = ok & (t >= 0.0) & (w >= 0.0) & (w <= 1.0)
    if not hit.any():
        return max_range
    return float(min(t[hit].min(), max_range))
