"""Central finite-difference checks for the operator set."""
from __future__ import annotations

import contextlib

import numpy as np

from . import ops
from .tensor import Tensor, backward, default_dtype

FD_STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic, numeric, floor=0.0) -> float:
    """Max-norm relative error ``|a - n|_inf / max(|a|_inf, |n|_inf, floor)``.

    ``floor`` keeps finite-difference round-off on exactly-zero gradients
    from reading as a 100% error.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


@contextlib.contextmanager
def record_kinks():
    """Collect the ReLU6 activation pattern of everything run inside."""
    log = []
    old = ops._kink_log
    ops._kink_log = log
    try:
        yield log
    finally:
        ops._kink_log = old


def _eval(f):
    with record_kinks() as log:
        value = f()
    return value, log


def numeric_grad(f, arr: np.ndarray, h=FD_STEP, indices=None, max_shrink=3) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place).

    If the two probes see different ReLU6 activation patterns the interval
    straddles a kink; the step is shrunk tenfold (up to ``max_shrink`` times)
    until both sides lie on the same linear piece.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        step = h
        for _ in range(max_shrink + 1):
            flat[i] = old + step
            fp, kp = _eval(f)
            flat[i] = old - step
            fm, km = _eval(f)
            flat[i] = old
            if kp == km:
                break
            step /= 10
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def check_function(fn, inputs, h=FD_STEP) -> float:
    """Max relative error of ``fn(*tensors)`` (a scalar) over all input grads."""
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    loss = fn(*tensors)
    backward(loss)
    worst = 0.0
    for t in tensors:
        num = numeric_grad(lambda: float(fn(*tensors).data), t.data, h)
        worst = max(worst, relative_error(t.grad, num))
    return worst


def _projected(op):
    """Turn a tensor-valued op into a scalar via a fixed random projection."""
    cache = {}

    def fn(*ts):
        out = op(*ts)
        if out.data.size == 1:
            return out
        r = cache.setdefault(out.shape, np.random.default_rng(99).normal(size=out.shape))
        return ops.sum_all(ops.mul(out, Tensor(r)))

    return fn


def op_cases(seed: int):
    """Yield (name, fn, inputs) gradient-check cases for one seed."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    o = int(rng.integers(1, 4))
    h = int(rng.integers(3, 7))
    w = int(rng.integers(3, 7))
    s = int(rng.integers(1, 3))
    x = rng.normal(size=(n, c, h, w))
    yield ("conv2d_3x3", _projected(lambda a, k, b: ops.conv2d(a, k, b, stride=s)),
           [x, rng.normal(size=(o, c, 3, 3)), rng.normal(size=o)])
    yield ("conv2d_1x1", _projected(lambda a, k: ops.conv2d(a, k, stride=s)),
           [x, rng.normal(size=(o, c, 1, 1))])
    yield ("depthwise_conv3x3", _projected(lambda a, k: ops.depthwise_conv3x3(a, k, stride=s)),
           [x, rng.normal(size=(c, 1, 3, 3))])
    nb = max(n, 2)
    xb = rng.normal(size=(nb, c, h, w)) * 2 + 1

    def bn(a, g, b):
        rm, rv = np.zeros(c), np.ones(c)
        return ops.batch_norm(a, g, b, rm, rv, training=True)

    yield ("batch_norm_train", _projected(bn), [xb, rng.uniform(0.5, 1.5, c), rng.normal(size=c)])
    rm, rv = rng.normal(size=c), rng.uniform(0.5, 2, c)
    yield ("batch_norm_infer",
           _projected(lambda a, g, b: ops.batch_norm(a, g, b, rm.copy(), rv.copy(), training=False)),
           [xb, rng.uniform(0.5, 1.5, c), rng.normal(size=c)])
    yield ("relu6", _projected(ops.relu6), [rng.uniform(-2, 8, size=(n, c, h, w))])
    yield ("sigmoid", _projected(ops.sigmoid_act), [rng.normal(scale=3, size=(n, c, h, w))])
    yield ("add", _projected(ops.add), [x, rng.normal(size=x.shape)])
    yield ("upsample2x_nearest", _projected(ops.upsample2x_nearest), [x])
    yield ("concat_channels", _projected(ops.concat_channels),
           [x, rng.normal(size=(n, o, h, w))])
    tgt = rng.normal(size=x.shape)
    mask = (rng.random(x.shape) < 0.5).astype(float)
    yield ("mse", lambda p: ops.mse(p, tgt, mask), [x])
    t01 = rng.random(x.shape)
    wts = rng.uniform(0, 2, x.shape)
    yield ("bce_with_logits", lambda z: ops.bce_with_logits(z, t01, wts),
           [rng.normal(scale=4, size=x.shape)])
    S = int(rng.integers(2, 5))
    lp = rng.normal(size=(n, 2 * S, h, w))
    lt = rng.normal(size=lp.shape)
    lm = (rng.random((n, h, w)) < 0.5).astype(float)
    lm.flat[0] = 1.0
    for mode in ("euclidean", "l1", "squared"):
        yield (f"line_deviation_{mode}",
               lambda p, mode=mode: ops.line_deviation(p, lt, lm, mode), [lp])


def run_op_checks(seeds=range(20), h=FD_STEP):
    """Return ``{op name: max relative error over seeds}`` (64-bit)."""
    worst = {}
    with default_dtype(np.float64):
        for seed in seeds:
            for name, fn, inputs in op_cases(seed):
                err = check_function(fn, inputs, h)
                worst[name] = max(worst.get(name, 0.0), err)
    return worst
