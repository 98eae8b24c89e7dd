import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patrolsim.core import (
    PedestrianState,
    RngStreams,
    SimClock,
    advance,
    discs_overlap,
    disc_rect_overlap,
    footprint_corners,
    normalize_angle,
    point_segment_distance,
    rects_overlap,
    vec2,
)


def make_ped(pid=0, x=(0, 0), v=(0, 0), v_pref=(0, 0), facing=0.0, l=0.45, w=0.25):
    return PedestrianState(pid, vec2(*x), vec2(*v), vec2(*v_pref), l=l, w=w, facing=facing)


class TestClock:
    def test_advance_increments(self):
        assert advance(SimClock(0, 0.1)).tick == 1

    def test_elapsed_after_advance(self):
        c = advance(SimClock(5, 0.1))
        assert c.elapsed == pytest.approx(0.6)

    def test_clones_advance_identically(self):
        a, b = SimClock(3, 0.05), SimClock(3, 0.05)
        assert advance(a) == advance(b)

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SimClock(-1, 0.1)
        with pytest.raises(ValueError):
            SimClock(0, 0.0)


class TestNormalizeAngle:
    def test_identity(self):
        assert normalize_angle(0.0) == 0.0

    def test_three_pi(self):
        assert normalize_angle(3 * math.pi) == pytest.approx(math.pi)

    def test_minus_pi_maps_to_pi(self):
        assert normalize_angle(-math.pi) == pytest.approx(math.pi)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            normalize_angle(float("nan"))
        with pytest.raises(ValueError):
            normalize_angle(float("inf"))

    @given(st.floats(min_value=-1e6, max_value=1e6))
    def test_idempotent_and_in_range(self, theta):
        r = normalize_angle(theta)
        assert -math.pi < r <= math.pi
        assert normalize_angle(r) == pytest.approx(r, abs=1e-12)
        # equivalent modulo 2*pi
        assert math.isclose(math.cos(r), math.cos(theta), abs_tol=1e-6)
        assert math.isclose(math.sin(r), math.sin(theta), abs_tol=1e-6)


class TestRngStreams:
    def test_same_seed_same_sequence(self):
        a = RngStreams(42).stream("frvo")
        b = RngStreams(42).stream("frvo")
        assert np.array_equal(a.random(16), b.random(16))

    def test_streams_independent(self):
        r = RngStreams(42)
        s1 = r.stream("sensing")
        _ = s1.random(100)  # extra draws on one stream
        other_before = RngStreams(42).stream("tracker").random(8)
        other_after = r.stream("tracker").random(8)
        assert np.array_equal(other_before, other_after)

    def test_indexed_substreams_differ(self):
        r = RngStreams(1)
        assert not np.array_equal(r.stream("x", 0).random(4), r.stream("x", 1).random(4))


class TestGeometry:
    def test_footprint_dimensions(self):
        p = make_ped(facing=0.0, l=0.5, w=0.3)
        corners = footprint_corners(p)
        # facing +x: box extends w/2 fore-aft (x) and l/2 laterally (y)
        assert corners[:, 0].max() == pytest.approx(0.15)
        assert corners[:, 1].max() == pytest.approx(0.25)

    def test_rects_overlap_cases(self):
        a = footprint_corners(make_ped(0, x=(0, 0)))
        b = footprint_corners(make_ped(1, x=(0.1, 0.0)))
        c = footprint_corners(make_ped(2, x=(2.0, 0.0)))
        assert rects_overlap(a, b)
        assert not rects_overlap(a, c)

    def test_rects_rotated_separating_axis(self):
        # Thin diagonal boxes offset along their forward axis: the AABBs
        # overlap but a diagonal separating axis exists.
        a = footprint_corners(make_ped(0, x=(0, 0), facing=math.pi / 4, l=1.0, w=0.1))
        b = footprint_corners(make_ped(1, x=(0.141, 0.141), facing=math.pi / 4, l=1.0, w=0.1))
        assert not rects_overlap(a, b)
        aabb_a = (a.min(0), a.max(0))
        aabb_b = (b.min(0), b.max(0))
        assert (aabb_a[0] <= aabb_b[1]).all() and (aabb_b[0] <= aabb_a[1]).all()

    def test_disc_rect_overlap(self):
        corners = footprint_corners(make_ped(0, x=(0, 0), l=0.5, w=0.3))
        assert disc_rect_overlap(vec2(0.3, 0.0), 0.2, corners)
        assert not disc_rect_overlap(vec2(1.0, 0.0), 0.2, corners)

    def test_discs_overlap_boundary_is_open(self):
        assert not discs_overlap(vec2(0, 0), 0.5, vec2(1.0, 0), 0.5)
        assert discs_overlap(vec2(0, 0), 0.5, vec2(0.99, 0), 0.5)

    def test_point_segment_distance(self):
        assert point_segment_distance(vec2(0, 1), vec2(-1, 0), vec2(1, 0)) == pytest.approx(1.0)
        assert point_segment_distance(vec2(3, 0), vec2(-1, 0), vec2(1, 0)) == pytest.approx(2.0)
        assert point_segment_distance(vec2(1, 1), vec2(0, 0), vec2(0, 0)) == pytest.approx(math.sqrt(2))


class TestPedestrianState:
    def test_radius_circumscribes_box(self):
        p = make_ped(l=0.6, w=0.8)
        assert p.radius == pytest.approx(0.5)

    def test_rejects_non_positive_dims(self):
        with pytest.raises(ValueError):
            make_ped(l=0.0)

    def test_facing_normalized(self):
        assert make_ped(facing=3 * math.pi).facing == pytest.approx(math.pi)
