"""Planar projective geometry for vanishing-point work.

Points are plain ``(x, y)`` pixel tuples, lines are homogeneous
``(a, b, c)`` triples with ``a*x + b*y + c = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

PARALLEL_TOL = 1e-12
DEGENERATE_TOL = 1e-9


class GeometryError(ValueError):
    pass


class DegenerateSegmentError(GeometryError):
    pass


class ParallelLinesError(GeometryError):
    pass


class EmptyEdgeError(GeometryError):
    pass


class Point2(NamedTuple):
    x: float
    y: float


class LineSegment(NamedTuple):
    a: Point2
    b: Point2

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    @property
    def midpoint(self) -> Point2:
        return Point2(0.5 * (self.a[0] + self.b[0]), 0.5 * (self.a[1] + self.b[1]))


class HomoLine(NamedTuple):
    a: float
    b: float
    c: float

    def normalized(self) -> "HomoLine":
        n = math.hypot(self.a, self.b)
        if n == 0.0:
            raise GeometryError("line has a = b = 0")
        return HomoLine(self.a / n, self.b / n, self.c / n)


@dataclass(frozen=True)
class Polyline:
    """Ordered sample points ``p_sl .. p_el`` along a line."""

    points: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise GeometryError("polyline needs at least two 2D points")
        object.__setattr__(self, "points", pts)

    @property
    def end_index(self) -> int:
        return self.start_index + len(self.points) - 1

    def __len__(self) -> int:
        return len(self.points)


def make_point(x, y) -> Point2:
    x, y = float(x), float(y)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise GeometryError(f"non-finite point ({x}, {y})")
    return Point2(x, y)


def make_segment(a, b) -> LineSegment:
    a, b = make_point(*a), make_point(*b)
    if math.hypot(b.x - a.x, b.y - a.y) <= DEGENERATE_TOL:
        raise DegenerateSegmentError(f"segment endpoints coincide: {a}")
    return LineSegment(a, b)


def line_through(p, q) -> HomoLine:
    """Unit-normal homogeneous line through two distinct points."""
    px, py = p
    qx, qy = q
    if math.hypot(qx - px, qy - py) <= DEGENERATE_TOL:
        raise DegenerateSegmentError(f"points coincide: {p}, {q}")
    # cross product of (px, py, 1) and (qx, qy, 1)
    return HomoLine(py - qy, qx - px, px * qy - py * qx).normalized()


def intersect(l1: HomoLine, l2: HomoLine) -> Point2:
    a1, b1, c1 = HomoLine(*l1).normalized()
    a2, b2, c2 = HomoLine(*l2).normalized()
    x = b1 * c2 - c1 * b2
    y = c1 * a2 - a1 * c2
    w = a1 * b2 - b1 * a2
    if abs(w) <= PARALLEL_TOL:
        raise ParallelLinesError("lines are parallel (no finite intersection)")
    return Point2(x / w, y / w)


def segment_intersection(s1, s2) -> Point2:
    """Intersection of the infinite extensions of two segments."""
    return intersect(line_through(*s1), line_through(*s2))


def discretize(seg, S: int) -> Polyline:
    if S < 2:
        raise GeometryError(f"need S >= 2 points, got {S}")
    a = np.asarray(seg[0], dtype=np.float64)
    b = np.asarray(seg[1], dtype=np.float64)
    k = np.arange(S, dtype=np.float64)[:, None]
    # multiply before dividing so grid-aligned inputs give exact points
    pts = a + (b - a) * k / (S - 1)
    # keep the endpoints exact
    pts[0] = a
    pts[-1] = b
    return Polyline(pts)


def point_line_distance(p, line: HomoLine) -> float:
    a, b, c = line
    n = math.hypot(a, b)
    if n == 0.0:
        raise GeometryError("line has a = b = 0")
    return abs(a * p[0] + b * p[1] + c) / n


def _as_points(E) -> np.ndarray:
    pts = np.asarray(E, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyEdgeError("edge has no points")
    return pts


def d_rms(E, v) -> float:
    """RMS distance of the edge points to the best line through ``v``.

    The best line's normal is the minor eigenvector of the second-moment
    matrix of ``E - v``, so the residual is the square root of its smallest
    eigenvalue.
    """
    d = _as_points(E) - np.asarray(v, dtype=np.float64)
    n = len(d)
    sxx = float(np.dot(d[:, 0], d[:, 0])) / n
    syy = float(np.dot(d[:, 1], d[:, 1])) / n
    sxy = float(np.dot(d[:, 0], d[:, 1])) / n
    half_tr = 0.5 * (sxx + syy)
    lam = half_tr - math.hypot(0.5 * (sxx - syy), sxy)
    return math.sqrt(max(lam, 0.0))


def d_rms_bruteforce(E, v, angle_steps: int = 100_000) -> float:
    """Minimum RMS residual over ``angle_steps`` line directions through ``v``."""
    if angle_steps < 2:
        raise ValueError("angle_steps must be >= 2")
    d = _as_points(E) - np.asarray(v, dtype=np.float64)
    best = math.inf
    # chunked to bound memory at 1e5 angles x many points
    for start in range(0, angle_steps, 8192):
        theta = np.arange(start, min(start + 8192, angle_steps)) * (math.pi / angle_steps)
        normals = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
        r = d @ normals.T
        best = min(best, float(np.min(np.mean(r * r, axis=0))))
    return math.sqrt(best)


def diagonal_scale(image_size) -> float:
    """Factor that maps pixel lengths to percent of the image diagonal."""
    w, h = image_size
    return 100.0 / math.hypot(w, h)


def consistency_error(edges: Sequence[Iterable], v, image_size=None) -> float:
    """Mean ``d_rms`` over ground-truth edges.

    With ``image_size`` the coordinates are first rescaled so the image
    diagonal spans 100 units, making the result percent-of-diagonal.
    """
    edges = list(edges)
    if not edges:
        raise EmptyEdgeError("no edges given")
    scale = 1.0 if image_size is None else diagonal_scale(image_size)
    vs = np.asarray(v, dtype=np.float64) * scale
    return sum(d_rms(_as_points(E) * scale, vs) for E in edges) / len(edges)
