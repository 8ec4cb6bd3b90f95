import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ikdnav.plan import (GlobalPlan, Track, TurnGate, carrot, cross_track_error, fillet, gate_crossings, project,
                         project_point)
from ikdnav.sim import VehicleState


def raw_plan(points, closed=False):
    return GlobalPlan.from_dense(np.asarray(points, dtype=float), closed)


def at(x, y, heading=0.0):
    return VehicleState(position_x=x, position_y=y, heading=heading)


class TestGlobalPlan:
    def test_arclength_starts_at_zero_and_increases(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [3, 0], [3, 4]])
        assert plan.cumulative_arclength[0] == 0.0
        assert np.all(np.diff(plan.cumulative_arclength) > 0)
        assert plan.total_length == pytest.approx(7.0)

    def test_closed_length_includes_closing_edge(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [2, 0], [2, 2], [0, 2]], closed=True)
        assert plan.total_length == pytest.approx(8.0)

    @pytest.mark.parametrize("pts", [[[0, 0]], [[0, 0], [0, 0], [1, 0]], [[0, 0, 1, 2], [1, 1]]])
    def test_rejects_bad_waypoints(self, pts):
        with pytest.raises(ValueError):
            GlobalPlan.from_waypoints(pts)

    def test_densified_segments_are_short(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0], [10, 10]], corner_radius=2.0)
        seg = np.hypot(*np.diff(plan._verts, axis=0).T)
        assert seg.max() <= 0.05 + 1e-12

    def test_fillet_keeps_turn_inside_radius(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0], [10, 10]], corner_radius=2.0)
        # rounded corner passes 2*(sqrt2 - 1) = 0.83 m from the sharp vertex
        d = np.hypot(plan._verts[:, 0] - 10, plan._verts[:, 1]).min()
        assert d == pytest.approx(2 * (math.sqrt(2) - 1), abs=2e-3)
        assert plan.total_length == pytest.approx(20 - 4 + math.pi, abs=1e-3)

    def test_per_corner_radius(self):
        pts = fillet([[0, 0], [10, 0, 1.0], [10, 10]], radius=3.0, closed=False)
        d = min(math.hypot(x - 10, y) for x, y in pts)
        assert d == pytest.approx(math.sqrt(2) - 1, abs=2e-3)

    def test_point_at_wraps_on_closed(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [5, 0], [5, 5], [0, 5]], closed=True)
        p, h = plan.point_at(21.0)
        assert p == pytest.approx([1.0, 0.0])
        assert h == pytest.approx(0.0)


class TestProjection:
    def test_on_waypoint(self):
        plan = raw_plan([[0, 0], [3, 0], [3, 4], [6, 4]])
        for k, (x, y) in enumerate(plan.waypoints):
            assert project(plan, at(x, y)) == pytest.approx(plan.cumulative_arclength[k] / plan.total_length)

    def test_tie_goes_to_larger_s(self):
        plan = raw_plan([[0, 0], [1, 0], [1, 1]])
        # 0.5 m from both legs; the nearest points sit at arclength 0.5 and 1.5
        assert project(plan, at(0.5, 0.5)) == pytest.approx(0.75)

    def test_window_keeps_first_leg_of_u_turn(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0], [10, 1], [0, 1]])
        robot = at(2.0, 0.55)
        unrestricted = project(plan, robot)
        windowed = project(plan, robot, previous_s=1.5 / plan.total_length)
        assert windowed * plan.total_length == pytest.approx(2.0, abs=1e-9)
        assert unrestricted * plan.total_length == pytest.approx(19.0, abs=1e-9)

    def test_window_wraps_on_closed_plan(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0], [10, 1], [0, 1]], closed=True)
        L = plan.total_length
        arc, *_ = project_point(plan, 0.3, 0.1, previous_s=(L - 1.0) / L)
        assert arc == pytest.approx(0.3, abs=1e-9)

    def test_never_moves_backward_within_window(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0]])
        s = project(plan, at(4.0, 0.2), previous_s=0.5)
        assert s == pytest.approx(0.5)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.0, 30.0), st.floats(-0.9, 0.9), st.floats(0.0, 2.0))
    def test_window_matches_unrestricted_without_self_near(self, along, offset, back):
        # a circle of radius 5: no two points are close in space yet far in arclength
        theta = np.linspace(0, 2 * math.pi, 200, endpoint=False)
        plan = raw_plan(np.c_[5 * np.cos(theta), 5 * np.sin(theta)], closed=True)
        ang = along / 5.0
        r = 5.0 + offset
        x, y = r * math.cos(ang), r * math.sin(ang)
        full = project(plan, at(x, y))
        prev = ((full * plan.total_length - back) % plan.total_length) / plan.total_length
        assert project(plan, at(x, y), previous_s=prev) == pytest.approx(full, abs=1e-9)

    def test_cross_track(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0]])
        assert cross_track_error(plan, 4.0, -0.3) == pytest.approx(0.3)


class TestCarrot:
    def test_ahead(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0]])
        c = carrot(plan, 0.0, at(0, 0))
        assert c.delta_x == (1.0, 0.0, 0.0)

    def test_robot_heading_plus_y(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0]])
        dx, dy, dh = carrot(plan, 0.0, at(0, 0, math.pi / 2)).delta_x
        assert (dx, dy, dh) == pytest.approx((0.0, -1.0, -math.pi / 2), abs=1e-12)

    def test_wraps_on_closed_loop(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [4, 0], [4, 1], [0, 1]], closed=True)
        assert plan.total_length == pytest.approx(10.0)
        c = carrot(plan, 0.95, at(0, 0))
        assert c.progress_s * plan.total_length == pytest.approx(0.5)
        assert c.target_point == pytest.approx((0.5, 0.0))

    def test_clamps_on_open_plan(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0]])
        assert carrot(plan, 0.99, at(9.9, 0)).progress_s == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 1.0))
    def test_on_plan_target_within_lookahead(self, s):
        plan = GlobalPlan.from_waypoints([[0, 0], [6, 0], [6, 6], [12, 6]], corner_radius=1.5)
        p, h = plan.point_at(s * plan.total_length)
        robot = at(p[0], p[1], h)
        s0 = project(plan, robot)
        c = carrot(plan, s0, robot)
        assert c.progress_s >= s0
        assert math.hypot(c.target_point[0] - p[0], c.target_point[1] - p[1]) <= 1.0 + 0.05


class TestGates:
    def test_single_crossing(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0]])
        assert gate_crossings(plan, ((3, -1), (3, 1))) == [pytest.approx(3.0)]

    def test_missing_gate_rejected(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0]])
        gate = TurnGate("T1", ((3, 1), (3, 2)), ((5, -1), (5, 1)))
        with pytest.raises(ValueError, match="T1 entry"):
            Track.build(plan, [], [gate])

    def test_double_crossing_rejected(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0], [10, 1], [0, 1]])
        gate = TurnGate("T9", ((3, -1), (3, 2)), ((5, -1), (5, 0.5)))
        with pytest.raises(ValueError, match="2 times"):
            Track.build(plan, [], [gate])

    def test_arclengths_resolved(self):
        plan = GlobalPlan.from_waypoints([[0, 0], [10, 0]])
        tr = Track.build(plan, [[(0, 1), (10, 1)]], [TurnGate("T1", ((3, -1), (3, 1)), ((5, -1), (5, 1)))])
        g = tr.turn_gates[0]
        assert (g.entry_arclength, g.exit_arclength) == pytest.approx((3.0, 5.0))
        assert tr.boundary_segments.shape == (1, 4)
