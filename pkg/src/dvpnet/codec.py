"""Mapping between image-space labels and per-cell prediction maps.

Channel layout per cell (logical order)::

    0, 1        vp x/y offset inside the cell (sigmoid-activated)
    2           confidence logit
    3 .. 2S+2   left line, S interleaved (x, y) points, grid units
    2S+3 ..     right line, same

Line points are offsets from the responsible cell's top-left corner and
are not squashed, so they may leave the cell or the image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from .geometry import LineSegment, Point2, Polyline, discretize

LAYOUT_VERSION = 1
SCALE_STRIDES = (32, 16, 8)


class EncodeError(ValueError):
    pass


@dataclass(frozen=True)
class GridGeometry:
    N: int
    stride: int

    @property
    def input_size(self) -> int:
        return self.N * self.stride

    def cell_of(self, x: float, y: float):
        """(col, row) of the cell containing pixel-space point (x, y)."""
        return int(math.floor(x / self.stride)), int(math.floor(y / self.stride))


def grids_for(input_size: int, strides=SCALE_STRIDES):
    if input_size % 32:
        raise ValueError(f"input size {input_size} not divisible by 32")
    return [GridGeometry(input_size // s, s) for s in strides]


@dataclass(frozen=True)
class HeadLayout:
    """Channel layout; ``order[i]`` is the physical channel of logical channel i."""

    S: int
    order: Optional[tuple] = None

    def __post_init__(self):
        if self.S < 2:
            raise ValueError(f"S must be >= 2, got {self.S}")
        if self.order is None:
            object.__setattr__(self, "order", tuple(range(self.B)))
        elif sorted(self.order) != list(range(self.B)):
            raise ValueError("order must be a permutation of the B channels")
        else:
            object.__setattr__(self, "order", tuple(int(i) for i in self.order))

    @property
    def B(self) -> int:
        return 3 + 4 * self.S

    @property
    def vp(self):
        return list(self.order[0:2])

    @property
    def conf(self):
        return self.order[2]

    @property
    def left(self):
        return list(self.order[3:3 + 2 * self.S])

    @property
    def right(self):
        return list(self.order[3 + 2 * self.S:3 + 4 * self.S])

    def channel_names(self):
        names = ["vp_x", "vp_y", "conf"]
        for side in ("left", "right"):
            for i in range(self.S):
                names += [f"{side}{i}_x", f"{side}{i}_y"]
        return names

    def to_dict(self):
        return {"layout_version": LAYOUT_VERSION, "S": self.S, "order": list(self.order),
                "channels": self.channel_names()}


@dataclass
class Detection:
    vp: Point2
    confidence: float
    left: Polyline
    right: Polyline
    scale_id: int
    cell: tuple = field(default=(0, 0))


def order_lines(lines: Sequence, vp) -> list:
    """Left/right assignment and point orientation for the two labeled lines.

    Left is the segment whose midpoint has the smaller x (then smaller y).
    Each segment is oriented to start at its endpoint nearer the vp.
    """
    vx, vy = vp
    segs = []
    for a, b in lines:
        da = math.hypot(a[0] - vx, a[1] - vy)
        db = math.hypot(b[0] - vx, b[1] - vy)
        segs.append((a, b) if da <= db else (b, a))
    segs.sort(key=lambda s: (0.5 * (s[0][0] + s[1][0]), 0.5 * (s[0][1] + s[1][1])))
    return segs


def line_points(lines, vp, S: int):
    """(left, right) arrays of S points each, in pixels."""
    left, right = order_lines(lines, vp)
    return discretize(left, S).points, discretize(right, S).points


def encode_targets(scene, grids, layout: HeadLayout, image_size=None, positive_scales=None):
    """Per-scale (B, N, N) target maps and (N, N) positive-cell masks.

    ``scene`` needs ``vp`` and ``main_lines``; ``image_size`` defaults to the
    grids' input size. The cell holding the vp is positive at every scale
    unless ``positive_scales`` (0-based indices) names a subset; the other
    grids then carry only negatives.
    """
    size = image_size or (grids[0].input_size, grids[0].input_size)
    w, h = size
    vx, vy = float(scene.vp[0]), float(scene.vp[1])
    if not (0 < vx < w and 0 < vy < h):
        raise EncodeError(f"vp ({vx}, {vy}) is outside the {w}x{h} image")
    left, right = line_points(scene.main_lines, (vx, vy), layout.S)
    targets, masks = [], []
    for k, g in enumerate(grids):
        t = np.zeros((layout.B, g.N, g.N))
        m = np.zeros((g.N, g.N))
        if positive_scales is not None and k not in positive_scales:
            targets.append(t)
            masks.append(m)
            continue
        col, row = g.cell_of(vx, vy)
        m[row, col] = 1.0
        t[layout.vp[0], row, col] = vx / g.stride - col
        t[layout.vp[1], row, col] = vy / g.stride - row
        t[layout.conf, row, col] = 1.0
        corner = np.array([col, row], dtype=np.float64)
        t[layout.left, row, col] = (left / g.stride - corner).reshape(-1)
        t[layout.right, row, col] = (right / g.stride - corner).reshape(-1)
        targets.append(t)
        masks.append(m)
    return targets, masks


def encode_batch(scenes, grids, layout, image_size=None, positive_scales=None):
    """Stack per-scene encodings into (n, B, N, N) targets and (n, N, N) masks."""
    per = [encode_targets(s, grids, layout, image_size, positive_scales) for s in scenes]
    targets = [np.stack([p[0][k] for p in per]) for k in range(len(grids))]
    masks = [np.stack([p[1][k] for p in per]) for k in range(len(grids))]
    return targets, masks


CONF_SATURATION = 50.0


def parse_positive_scales(text):
    """``"all"`` -> None, ``"1,3"`` -> (0, 2); scale ids are 1-based (1 = stride 32)."""
    text = str(text).strip().lower()
    if text == "all":
        return None
    ids = sorted({int(t) for t in text.split(",") if t.strip()})
    if not ids or not set(ids) <= {1, 2, 3}:
        raise ValueError(f"positive scales must be 'all' or drawn from 1,2,3, got {text!r}")
    return tuple(i - 1 for i in ids)


def ideal_logits(targets, masks, layout: HeadLayout, eps=1e-12):
    """Raw maps that decode exactly to ``targets`` (inverse of the activations)."""
    out = []
    for t, m in zip(targets, masks):
        p = np.array(t, dtype=np.float64, copy=True)
        p[..., layout.vp, :, :] = logit(np.clip(t[..., layout.vp, :, :], eps, 1 - eps))
        p[..., layout.conf, :, :] = np.where(m > 0, CONF_SATURATION, -CONF_SATURATION)
        out.append(p)
    return out


def _as_maps(preds):
    return [np.asarray(getattr(p, "data", p), dtype=np.float64) for p in preds]


def _candidates(maps, layout, scales):
    """Every cell as (confidence, scale, row, col), scale 0 = coarsest."""
    rows = []
    for k, m in enumerate(maps):
        if scales is not None and k not in scales:
            continue
        conf = expit(m[layout.conf])
        n = conf.shape[0]
        rr, cc = np.divmod(np.arange(n * n), n)
        rows.append(np.stack([conf.reshape(-1), np.full(n * n, k), rr, cc], axis=1))
    return np.concatenate(rows)


def _detection(maps, grids, layout, image_size, k, row, col) -> Detection:
    m, g = maps[k], grids[k]
    w, h = image_size
    cell = m[:, row, col]
    vx = (expit(cell[layout.vp[0]]) + col) * g.stride
    vy = (expit(cell[layout.vp[1]]) + row) * g.stride
    vp = Point2(float(min(max(vx, 0.0), w)), float(min(max(vy, 0.0), h)))
    corner = np.array([col, row], dtype=np.float64)
    left = (cell[layout.left].reshape(-1, 2) + corner) * g.stride
    right = (cell[layout.right].reshape(-1, 2) + corner) * g.stride
    return Detection(vp, float(expit(cell[layout.conf])), Polyline(left), Polyline(right),
                     scale_id=k + 1, cell=(int(row), int(col)))


def decode_topk(preds, grids, layout: HeadLayout, image_size=None, k=1, scales=None):
    """The ``k`` most confident cells across scales.

    ``preds`` are single-image (B, N, N) raw maps, coarsest first. Ties go to
    the coarser scale, then row-major cell order. ``scales`` (0-based) limits
    which grids may answer.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    maps = _as_maps(preds)
    size = image_size or (grids[0].input_size, grids[0].input_size)
    cand = _candidates(maps, layout, scales)
    # lexsort: last key is primary
    order = np.lexsort((cand[:, 3], cand[:, 2], cand[:, 1], -cand[:, 0]))[:k]
    return [_detection(maps, grids, layout, size, int(cand[i, 1]), int(cand[i, 2]), int(cand[i, 3]))
            for i in order]


def decode(preds, grids, layout: HeadLayout, image_size=None, scales=None) -> Detection:
    return decode_topk(preds, grids, layout, image_size, 1, scales)[0]


def decode_batch(preds, grids, layout, image_size=None, scales=None):
    maps = _as_maps(preds)
    return [decode([m[i] for m in maps], grids, layout, image_size, scales)
            for i in range(maps[0].shape[0])]
