import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dvpnet.geometry import (DegenerateSegmentError, EmptyEdgeError, ParallelLinesError, Point2,
                             consistency_error, d_rms, d_rms_bruteforce, diagonal_scale,
                             discretize, intersect, line_through, make_point, make_segment,
                             point_line_distance, segment_intersection)

coord = st.floats(-500, 500, allow_nan=False)
pt = st.tuples(coord, coord)


def test_line_through_axes():
    a, b, c = line_through((0, 0), (1, 0))
    assert a == 0 and abs(b) == 1 and c == 0
    a, b, c = line_through((0, 0), (0, 1))
    assert abs(a) == 1 and b == 0 and c == 0


def test_line_through_degenerate():
    with pytest.raises(DegenerateSegmentError):
        line_through((2, 3), (2, 3))
    with pytest.raises(DegenerateSegmentError):
        make_segment((1, 1), (1, 1))


@given(pt, pt)
def test_line_through_contains_endpoints(p, q):
    if math.dist(p, q) < 1e-3:
        return
    line = line_through(p, q)
    assert math.isclose(math.hypot(line.a, line.b), 1.0, rel_tol=1e-12)
    assert point_line_distance(p, line) <= 1e-9
    assert point_line_distance(q, line) <= 1e-9


def test_intersect_axes_and_parallel():
    x_axis = line_through((0, 0), (1, 0))
    y_axis = line_through((0, 0), (0, 1))
    assert intersect(x_axis, y_axis) == Point2(0, 0)
    with pytest.raises(ParallelLinesError):
        intersect((1, 0, 0), (1, 0, -5))


def test_intersect_random_substitution():
    rng = np.random.default_rng(1)
    for _ in range(500):
        l1 = line_through(*rng.uniform(-100, 100, (2, 2)))
        l2 = line_through(*rng.uniform(-100, 100, (2, 2)))
        if abs(l1.a * l2.b - l1.b * l2.a) < 1e-3:
            continue
        p = intersect(l1, l2)
        # residual tolerance scaled by the point's magnitude
        tol = 1e-9 * max(1.0, abs(p.x), abs(p.y))
        assert point_line_distance(p, l1) <= tol
        assert point_line_distance(p, l2) <= tol


def test_segment_intersection_cross():
    assert segment_intersection(((0, 20), (5, 20)), ((10, 0), (10, 5))) == Point2(10, 20)


def test_discretize_examples():
    pl = discretize(((0, 0), (10, 0)), 6)
    np.testing.assert_array_equal(pl.points[:, 0], [0, 2, 4, 6, 8, 10])
    np.testing.assert_array_equal(pl.points[:, 1], 0)
    pl = discretize(((1.5, -2), (7, 3)), 2)
    np.testing.assert_array_equal(pl.points, [[1.5, -2], [7, 3]])
    pl = discretize(((0, 0), (9, 9)), 23)
    assert len(pl) == 23 and pl.end_index == 22
    gaps = np.linalg.norm(np.diff(pl.points, axis=0), axis=1)
    assert np.ptp(gaps) <= 1e-12


def test_discretize_needs_two_points():
    with pytest.raises(ValueError):
        discretize(((0, 0), (1, 1)), 1)


def test_point_line_distance():
    x_axis = line_through((0, 0), (1, 0))
    assert point_line_distance((0, 3), x_axis) == 3
    assert point_line_distance((7, 0), x_axis) == 0


def test_point_line_distance_vs_projection():
    rng = np.random.default_rng(2)
    for _ in range(200):
        a, b, p = rng.uniform(-50, 50, (3, 2))
        u = (b - a) / np.linalg.norm(b - a)
        foot = a + np.dot(p - a, u) * u
        expect = np.linalg.norm(p - foot)
        assert abs(point_line_distance(p, line_through(a, b)) - expect) <= 1e-9


def test_make_point_rejects_nonfinite():
    with pytest.raises(ValueError):
        make_point(float("nan"), 0)


def test_d_rms_trivial_cases():
    assert d_rms([(1, 1), (2, 2), (5, 5)], (0, 0)) <= 1e-12
    assert d_rms([(3, 4)], (0, 0)) == 0
    with pytest.raises(EmptyEdgeError):
        d_rms([], (0, 0))


def test_d_rms_worked_example():
    E = [(1, 1), (2, -1), (3, 0)]
    oracle = d_rms_bruteforce(E, (0, 0))
    assert abs(oracle - 0.7994) < 5e-5
    assert abs(d_rms(E, (0, 0)) - oracle) < 1e-4


def test_bruteforce_properties():
    E = [(1, 1), (2, -1), (3, 0)]
    assert d_rms_bruteforce(E, (0, 0), angle_steps=2) >= d_rms(E, (0, 0))
    # collinear edges whose direction lies on the sweep grid (0 and 45 degrees)
    assert d_rms_bruteforce([(1, 5), (2, 5), (-3, 5)], (0, 5)) <= 1e-9
    assert d_rms_bruteforce([(1, 1), (2, 2), (-3, -3)], (0, 0)) <= 1e-9


@given(st.lists(pt, min_size=1, max_size=12), pt)
def test_d_rms_is_minimum_over_directions(E, v):
    # no line through v can beat the closed form
    val = d_rms(E, v)
    d = np.asarray(E, float) - v
    for th in np.linspace(0, np.pi, 37):
        r = d @ np.array([-np.sin(th), np.cos(th)])
        assert val <= math.sqrt(np.mean(r * r)) + 1e-7 * (1 + np.abs(d).max())


def test_consistency_error_examples():
    e1 = [(10, 10), (20, 20), (30, 30)]
    e2 = [(10, -10), (20, -20)]
    assert consistency_error([e1, e2], (0, 0)) <= 1e-12
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 2)), rng.normal(size=(7, 2))
    v = (0.3, -0.2)
    assert consistency_error([a], v) == d_rms(a, v)
    assert abs(consistency_error([a, b], v) - 0.5 * (d_rms(a, v) + d_rms(b, v))) <= 1e-15


def test_consistency_error_percent_of_diagonal():
    a = [(0, 0), (30, 40)]
    v = (10, 0)
    px = d_rms(a, v)
    assert diagonal_scale((30, 40)) == 2.0
    assert math.isclose(consistency_error([a], v, (30, 40)), 2.0 * px, rel_tol=1e-12)
    with pytest.raises(EmptyEdgeError):
        consistency_error([], v)
