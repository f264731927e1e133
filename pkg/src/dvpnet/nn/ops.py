"""Differentiable operators over NCHW tensors.

Every op returns a fresh :class:`Tensor`; when recording, the result carries
a closure mapping its output gradient to the gradients of its inputs.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .tensor import Tensor, as_tensor, make_node

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    pass


def _same_shape(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _out_size(n: int, stride: int) -> int:
    return -(-n // stride)


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x, c) -> Tensor:
    """Multiply by a constant scalar."""
    x = as_tensor(x)
    c = float(c)
    return make_node(x.data * x.dtype.type(c), (x,), lambda g: (g * g.dtype.type(c),))


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return make_node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def _is_unique_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    fancy = [p for p in parts if not isinstance(p, (slice, int, type(None), type(Ellipsis)))]
    if not fancy:
        return True
    if len(fancy) > 1:
        return False
    arr = np.asarray(fancy[0])
    return arr.dtype != bool and len(np.unique(arr)) == arr.size


def index(x, idx) -> Tensor:
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    unique = _is_unique_index(idx)

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        if unique:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_node(np.ascontiguousarray(x.data[idx]), (x,), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# set to a list by gradcheck.record_kinks() to log ReLU6 activation patterns
_kink_log = None


def relu6(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    out = np.clip(d, 0, 6)
    if _kink_log is not None:
        _kink_log.append(np.packbits((d > 0) & (d < 6)).tobytes())
    return make_node(out, (x,), lambda g: (g * ((d > 0) & (d < 6)),))


def sigmoid_act(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1 - s),))


# ------------------------------------------------------------------ shape ops

def upsample2x_nearest(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_node(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def concat_channels(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return make_node(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


# -------------------------------------------------------------- convolutions

def _windows(xp, k, stride, ho, wo):
    """Yield (ki, kj, view) for each kernel tap over a padded input."""
    for ki in range(k):
        for kj in range(k):
            yield ki, kj, (slice(None), slice(None),
                           slice(ki, ki + stride * (ho - 1) + 1, stride),
                           slice(kj, kj + stride * (wo - 1) + 1, stride))


def conv2d(x, weight, bias=None, stride=1) -> Tensor:
    """Dense convolution with zero "same" padding (k in {1, 3}, stride 1 or 2).

    Output spatial size is ``ceil(input / stride)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIkk weight")
    n, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: weight expects {ci} input channels, input has {c}")
    if k != k2 or k not in (1, 3):
        raise ShapeError(f"conv2d: unsupported kernel {k}x{k2}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: unsupported stride {stride}")
    if h < k or w < k:
        raise ShapeError(f"conv2d: input {h}x{w} smaller than kernel")
    ho, wo = _out_size(h, stride), _out_size(w, stride)
    wmat = weight.data.reshape(o, c * k * k)
    if k == 1:
        cols = np.ascontiguousarray(x.data[:, :, ::stride, ::stride]).reshape(n, c, ho * wo)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = np.empty((n, c, k * k, ho, wo), dtype=x.dtype)
        for ki, kj, sl in _windows(xp, k, stride, ho, wo):
            cols[:, :, ki * k + kj] = xp[sl]
        cols = cols.reshape(n, c * k * k, ho * wo)
    out = np.matmul(wmat, cols).reshape(n, o, ho, wo)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None, None]
        parents = (x, weight, bias)

    def back(g):
        g2 = g.reshape(n, o, ho * wo)
        gw = gx = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            if k == 1:
                if stride == 1:
                    gx = gcols.reshape(n, c, h, w)
                else:
                    gx = np.zeros(x.shape, dtype=g.dtype)
                    gx[:, :, ::stride, ::stride] = gcols.reshape(n, c, ho, wo)
            else:
                gcols = gcols.reshape(n, c, k * k, ho, wo)
                gxp = np.zeros((n, c, h + 2, w + 2), dtype=g.dtype)
                for ki, kj, sl in _windows(gxp, k, stride, ho, wo):
                    gxp[sl] += gcols[:, :, ki * k + kj]
                gx = gxp[:, :, 1:-1, 1:-1]
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return make_node(out, parents, back)


def depthwise_conv3x3(x, weight, stride=1) -> Tensor:
    """Per-channel 3x3 convolution; ``weight`` has shape (C, 1, 3, 3)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError("depthwise_conv3x3 expects NCHW input")
    n, c, h, w = x.shape
    if weight.shape != (c, 1, 3, 3):
        raise ShapeError(f"depthwise_conv3x3: weight {weight.shape} does not match {c} channels")
    if stride not in (1, 2):
        raise ShapeError(f"depthwise_conv3x3: unsupported stride {stride}")
    if h < 3 or w < 3:
        raise ShapeError(f"depthwise_conv3x3: input {h}x{w} smaller than kernel")
    ho, wo = _out_size(h, stride), _out_size(w, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    wd = weight.data[:, 0]
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    tmp = np.empty_like(out)
    for ki, kj, sl in _windows(xp, 3, stride, ho, wo):
        np.multiply(xp[sl], wd[None, :, ki, kj, None, None], out=tmp)
        out += tmp

    def back(g):
        gw = gx = None
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for ki, kj, sl in _windows(xp, 3, stride, ho, wo):
                gw[:, 0, ki, kj] = np.einsum("nchw,nchw->c", g, xp[sl])
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for ki, kj, sl in _windows(xp, 3, stride, ho, wo):
                np.multiply(g, wd[None, :, ki, kj, None, None], out=tmp)
                gxp[sl] += tmp
            gx = gxp[:, :, 1:-1, 1:-1]
        return gx, gw

    return make_node(out, (x, weight), back)


# ------------------------------------------------------------ normalization

def batch_norm(x, scale_, shift, running_mean, running_var, training=True,
               momentum=BN_MOMENTUM, eps=BN_EPS) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the running statistics (plain arrays) are updated in
    place; the running variance uses the unbiased batch estimate.
    """
    x, scale_, shift = as_tensor(x), as_tensor(scale_), as_tensor(shift)
    c = x.shape[1]
    if scale_.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"batch_norm: scale/shift must have shape ({c},)")
    axes = (0, 2, 3)
    bshape = (1, c, 1, 1)
    d = x.data
    m = d.size // c
    if training:
        mean = d.mean(axis=axes)
        xhat = d - mean.reshape(bshape)
        var = np.einsum("nchw,nchw->c", xhat, xhat) / m
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        xhat = d - running_mean.reshape(bshape).astype(d.dtype)
        var = running_var.astype(d.dtype)
    invstd = (1.0 / np.sqrt(var + eps)).astype(d.dtype)
    xhat *= invstd.reshape(bshape)
    gamma = scale_.data
    out = xhat * gamma.reshape(bshape)
    out += shift.data.reshape(bshape)

    def back(g):
        gs = np.einsum("nchw,nchw->c", g, xhat)
        gb = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            k = (gamma * invstd).reshape(bshape)
            if training:
                gx = xhat * (gs / m).reshape(bshape)
                gx += (gb / m).reshape(bshape)
                np.subtract(g, gx, out=gx)
                gx *= k
            else:
                gx = g * k
        return gx, gs, gb

    return make_node(out, (x, scale_, shift), back)


# ------------------------------------------------------------------ losses

def mse(pred, target, mask=None) -> Tensor:
    """Masked mean squared error: sum(mask * (pred - target)^2) / max(sum(mask), 1)."""
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=pred.dtype)
    m = np.ones_like(pred.data) if mask is None else np.asarray(mask, dtype=pred.dtype)
    if t.shape != pred.shape or m.shape != pred.shape:
        raise ShapeError("mse: pred, target and mask shapes must agree")
    den = max(float(m.sum()), 1.0)
    diff = (pred.data - t) * m
    loss = np.asarray(np.sum(diff * diff) / den, dtype=pred.dtype)
    return make_node(loss, (pred,), lambda g: (g * (2.0 / den) * diff,))


def bce_with_logits(logits, target, weight=None, normalizer=None) -> Tensor:
    """Weighted binary cross-entropy on raw logits, divided by ``normalizer``.

    The default normalizer is the weight sum (a weighted mean). Uses
    ``max(z, 0) - z*t + log1p(exp(-|z|))`` which stays finite for any
    finite logit.
    """
    z = as_tensor(logits)
    t = np.asarray(target, dtype=z.dtype)
    w = np.ones_like(z.data) if weight is None else np.asarray(weight, dtype=z.dtype)
    if t.shape != z.shape or w.shape != z.shape:
        raise ShapeError("bce_with_logits: logits, target and weight shapes must agree")
    zd = z.data
    per = np.maximum(zd, 0) - zd * t + np.log1p(np.exp(-np.abs(zd)))
    den = float(w.sum()) if normalizer is None else float(normalizer)
    den = den if den > 0 else 1.0
    loss = np.asarray(np.sum(w * per) / den, dtype=z.dtype)
    return make_node(loss, (z,), lambda g: (g * w * (expit(zd) - t) / den,))


LINE_MODES = ("euclidean", "l1", "squared")


def line_deviation(pred, target, mask, mode="euclidean") -> Tensor:
    """Mean per-point deviation between predicted and target polylines.

    ``pred``/``target`` are (N, 2S, H, W) maps with interleaved (x, y) point
    channels, ``mask`` is (N, H, W). For each masked cell the S point
    deviations are averaged; cells are then averaged over the mask.
    """
    pred = as_tensor(pred)
    if mode not in LINE_MODES:
        raise ValueError(f"unknown line deviation mode {mode!r}")
    t = np.asarray(target, dtype=pred.dtype)
    m = np.asarray(mask, dtype=pred.dtype)
    n, c2, h, w = pred.shape
    if t.shape != pred.shape or c2 % 2 or m.shape != (n, h, w):
        raise ShapeError("line_deviation: inconsistent shapes")
    S = c2 // 2
    diff = (pred.data - t).reshape(n, S, 2, h, w)
    if mode == "euclidean":
        dev = np.sqrt(np.sum(diff * diff, axis=2))
        safe = np.where(dev > 0, dev, 1.0)
        ddev = np.where(dev[:, :, None] > 0, diff / safe[:, :, None], 0.0)
    elif mode == "l1":
        dev = np.sum(np.abs(diff), axis=2)
        ddev = np.sign(diff)
    else:
        dev = np.sum(diff * diff, axis=2)
        ddev = 2.0 * diff
    den = max(float(m.sum()), 1.0)
    mm = m[:, None]
    loss = np.asarray(np.sum(dev * mm) / (S * den), dtype=pred.dtype)

    def back(g):
        return ((g / (S * den)) * ddev * mm[:, :, None]).reshape(pred.shape).astype(pred.dtype, copy=False),

    return make_node(loss, (pred,), back)
