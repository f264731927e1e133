"""Composite detection loss: vp offsets, confidence and the two line proposals."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .codec import HeadLayout
from .nn import ops


# zero-gradient floor, relative to the largest gradient in the model
GRAD_FLOOR = 1e-6
CONF_REDUCTIONS = ("mean", "sum")


class TargetError(ValueError):
    pass


@dataclass
class LossWeights:
    S: int = 23
    lambda_coord: float = 5.0
    lambda_conf_pos: float = 1.0
    lambda_conf_neg: float = 0.5
    line_mode: str = "euclidean"
    # "sum": per-sample sum over cells, "mean": weighted mean over cells
    conf_reduction: str = "mean"

    def __post_init__(self):
        if min(self.lambda_coord, self.lambda_conf_pos, self.lambda_conf_neg) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.line_mode not in ops.LINE_MODES:
            raise ValueError(f"unknown line mode {self.line_mode!r}")
        if self.conf_reduction not in CONF_REDUCTIONS:
            raise ValueError(f"conf_reduction must be one of {CONF_REDUCTIONS}")

    @property
    def lambda_l(self) -> float:
        # tied to S so the line term does not grow with the slice count
        return 2.5 / self.S


@dataclass
class LossBreakdown:
    total: object
    coord: float
    conf: float
    line_left: float
    line_right: float
    per_scale: list = field(default_factory=list)

    def as_row(self):
        return {"total": float(self.total.data), "coord": self.coord, "conf": self.conf,
                "line_left": self.line_left, "line_right": self.line_right}


def line_err(P, p, mode="euclidean") -> float:
    """Mean per-point deviation between two equally long polylines."""
    P = np.asarray(getattr(P, "points", P), dtype=np.float64)
    p = np.asarray(getattr(p, "points", p), dtype=np.float64)
    if P.shape != p.shape:
        raise ValueError(f"polyline lengths differ: {len(P)} vs {len(p)}")
    d = P - p
    if mode == "euclidean":
        dev = np.hypot(d[:, 0], d[:, 1])
    elif mode == "l1":
        dev = np.abs(d).sum(axis=1)
    else:
        dev = (d * d).sum(axis=1)
    return float(dev.mean())


def total_loss(preds, targets, masks, weights: LossWeights, layout: HeadLayout = None,
               scales=None) -> LossBreakdown:
    """Weighted sum of the per-scale terms; ``total`` is a differentiable Tensor.

    ``preds`` are (n, B, N, N) raw maps, ``targets``/``masks`` the matching
    encodings. ``scales`` (0-based indices) restricts which grids contribute.
    """
    layout = layout or HeadLayout(weights.S)
    if layout.S != weights.S:
        raise ValueError(f"layout S={layout.S} but weights S={weights.S}")
    use = range(len(preds)) if scales is None else sorted(scales)
    if not any(np.asarray(masks[k]).any() for k in use):
        raise TargetError("no positive cell in any scale")
    total = None
    coord = conf = ll = lr = 0.0
    per_scale = []
    for k in use:
        p, t, m = preds[k], np.asarray(targets[k]), np.asarray(masks[k])
        if p.shape != t.shape or p.shape[1] != layout.B or m.shape != (t.shape[0],) + t.shape[2:]:
            raise TargetError(f"scale {k}: prediction {p.shape}, target {t.shape}, mask {m.shape}, "
                              f"B={layout.B}")
        vp_pred = ops.sigmoid_act(ops.index(p, (slice(None), layout.vp)))
        vp_mask = np.repeat(m[:, None], 2, axis=1)
        l_coord = ops.mse(vp_pred, t[:, layout.vp], vp_mask)
        conf_w = np.where(m > 0, weights.lambda_conf_pos, weights.lambda_conf_neg)
        norm = len(m) if weights.conf_reduction == "sum" else None
        l_conf = ops.bce_with_logits(ops.index(p, (slice(None), layout.conf)), m, conf_w, norm)
        l_left = ops.line_deviation(ops.index(p, (slice(None), layout.left)), t[:, layout.left],
                                    m, weights.line_mode)
        l_right = ops.line_deviation(ops.index(p, (slice(None), layout.right)), t[:, layout.right],
                                     m, weights.line_mode)
        term = ops.add(ops.add(ops.scale(l_coord, weights.lambda_coord), l_conf),
                       ops.scale(ops.add(l_left, l_right), weights.lambda_l))
        total = term if total is None else ops.add(total, term)
        parts = (float(l_coord.data), float(l_conf.data), float(l_left.data), float(l_right.data))
        per_scale.append(parts)
        coord += parts[0]
        conf += parts[1]
        ll += parts[2]
        lr += parts[3]
    return LossBreakdown(total, coord, conf, ll, lr, per_scale)


def micro_batch(config, seed=0, batch=2, zero_image=False):
    """Synthetic inputs and encoded targets sized for ``config``."""
    from .codec import encode_batch, grids_for
    from .synthgen import SceneConfig, generate_scene, scene_rng
    scfg = SceneConfig(image_size=config.input_size, seed=seed)
    scenes = [generate_scene(scfg, scene_rng(seed, i)) for i in range(batch)]
    x = np.stack([s.image.transpose(2, 0, 1) for s in scenes]).astype(np.float64)
    if zero_image:
        x[:] = 0.0
    targets, masks = encode_batch(scenes, grids_for(config.input_size), HeadLayout(config.S))
    return x, targets, masks


def grad_check_loss(micro=None, seed=0, h=1e-5, batch=2) -> float:
    """Max relative finite-difference error of the total loss over every parameter.

    Builds a micro model in float64 (batch norm in training mode) and compares
    backprop against central differences element by element. Per-tensor
    errors are normalised by at least ``GRAD_FLOOR`` times the largest
    gradient anywhere in the model.
    """
    from .model import build, micro_config
    from .nn.gradcheck import numeric_grad, relative_error
    config = micro or micro_config()
    with nn.default_dtype(np.float64):
        net = build(config, seed=seed, dtype=np.float64)
        x, targets, masks = micro_batch(config, seed, batch)
        weights = LossWeights(S=config.S)

        def f():
            with nn.no_grad():
                return float(total_loss(net(x), targets, masks, weights).total.data)

        net.zero_grad()
        nn.backward(total_loss(net(x), targets, masks, weights).total)
        numeric = [numeric_grad(f, p.data, h) for p in net.params]
    floor = GRAD_FLOOR * max(np.abs(p.grad).max() for p in net.params)
    return max(relative_error(p.grad, n, floor) for p, n in zip(net.params, numeric))
