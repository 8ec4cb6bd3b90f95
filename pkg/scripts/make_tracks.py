"""Regenerate the bundled track files in src/ikdnav/resources.

Each track is a closed polyline of corners, filleted by the loader. Gates sit
a fixed distance before the first and after the last corner of each turn.
"""

from __future__ import annotations

import math
import sys
from pathlib import Path

import yaml

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from ikdnav.plan import GlobalPlan, project_point  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "src" / "ikdnav" / "resources"

CEMENT = {"grip": 1.0, "roughness": 0.0, "drag": 0.0}
GRASS = {"grip": 0.9, "roughness": 0.15, "drag": 0.5}
LEAVES = {"grip": 0.8, "roughness": 0.3, "drag": 1.0}
GRAVEL = {"grip": 0.85, "roughness": 0.22, "drag": 0.6}
MUD = {"grip": 0.6, "roughness": 0.1, "drag": 0.8}


def rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def gates(waypoints, turns, corner_radius, margin):
    plan = GlobalPlan.from_waypoints(waypoints, True, corner_radius)
    out = []
    for label, first, last in turns:
        a = project_point(plan, *waypoints[first][:2])[0]
        b = project_point(plan, *waypoints[last][:2])[0]
        out.append({"label": label, "entry_at": round(a - margin, 3), "exit_at": round(b + margin, 3)})
    return plan, out


def backyard():
    s30 = 3 * math.cos(math.radians(30))
    wp = [
        [0.0, 0.0],
        [5.0, 0.0],                       # T1 gentle left
        [5.0 + s30, 1.5],                 # T2 gentle right
        [5.0 + 2 * s30, 0.0],             # T3 gentle left
        [14.2, 0.0],                      # T4 90 left
        [14.2, 10.0], [8.7, 10.0],        # T5 180 left
        [8.7, 5.0], [3.2, 5.0],           # T6 180 right
        [3.2, 10.0], [-2.3, 10.0],        # T7 180 left
        [-2.3, 0.0],                      # T8 90 left
    ]
    wp = [[round(x, 3), round(y, 3)] for x, y in wp]
    turns = [("T1", 1, 1), ("T2", 2, 2), ("T3", 3, 3), ("T4", 4, 4),
             ("T5", 5, 6), ("T6", 7, 8), ("T7", 9, 10), ("T8", 11, 11)]
    radius = 1.5
    _, g = gates(wp, turns, radius, 1.4)
    return {
        "name": "backyard",
        "plan": {"closed": True, "corner_radius": radius, "waypoints": wp},
        "corridor_half_width": 0.6,
        "gates": g,
        "terrain": {
            "nominal": CEMENT,
            "patches": [
                {"name": "grass", **GRASS, "boundary": rect(11.5, -2.0, 17.0, 13.0)},
                {"name": "leaves", **LEAVES, "boundary": rect(1.0, 3.0, 11.5, 13.0)},
                {"name": "mud", **MUD, "boundary": rect(-5.0, -2.0, 1.0, 3.0)},
            ],
        },
        "arena": [-4.0, -2.0, 16.0, 12.0],
    }


def hall():
    wp = [[0.0, 0.0], [12.0, 0.0], [12.0, 6.0], [7.0, 6.0], [7.0, 2.5], [3.0, 2.5], [3.0, 8.0], [-2.0, 8.0],
          [-2.0, 0.0]]
    turns = [("T1", 1, 1), ("T2", 2, 3), ("T3", 4, 5), ("T4", 6, 7), ("T5", 8, 8)]
    radius = 1.5
    _, g = gates(wp, turns, radius, 1.4)
    return {
        "name": "hall",
        "plan": {"closed": True, "corner_radius": radius, "waypoints": wp},
        "corridor_half_width": 0.45,
        "gates": g,
        "terrain": {"nominal": GRAVEL, "patches": []},
        "arena": [-3.0, -1.0, 13.0, 9.0],
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for doc in (backyard(), hall()):
        path = OUT / f"{doc['name']}.yaml"
        path.write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))
        print(path)


if __name__ == "__main__":
    main()
