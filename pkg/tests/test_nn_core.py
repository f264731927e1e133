from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dvpnet import nn
from dvpnet.nn import ops
from dvpnet.nn.gradcheck import TOLERANCE, numeric_grad, relative_error, run_op_checks
from dvpnet.nn.reference import conv2d_naive, depthwise_naive


def conv_cases(count=24, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n, c, o = rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 5)
        h, w = rng.integers(3, 9, size=2)
        k, s = rng.choice([1, 3]), rng.choice([1, 2])
        yield (rng.normal(size=(n, c, h, w)), rng.normal(size=(o, c, k, k)), rng.normal(size=o), int(s))


# ---------------------------------------------------------------- conv2d

def test_conv1x1_identity():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 4))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(ops.conv2d(x, w).data, x)


def test_conv3x3_counting():
    out = ops.conv2d(np.ones((1, 1, 5, 5)), np.ones((1, 1, 3, 3))).data[0, 0]
    assert np.all(out[1:-1, 1:-1] == 9)
    assert out[0, 0] == 4 and out[0, 2] == 6


@pytest.mark.parametrize("case", list(conv_cases()), ids=lambda c: "x".join(map(str, c[0].shape)))
def test_conv_matches_naive(case):
    x, w, b, s = case
    fast = ops.conv2d(x, w, b, stride=s).data
    assert fast.shape[2:] == (-(-x.shape[2] // s), -(-x.shape[3] // s))
    assert np.abs(fast - conv2d_naive(x, w, b, s)).max() <= 1e-12


def test_conv_shape_errors():
    with pytest.raises(nn.ShapeError):
        ops.conv2d(np.ones((1, 2, 5, 5)), np.ones((1, 3, 3, 3)))
    with pytest.raises(nn.ShapeError):
        ops.conv2d(np.ones((1, 2, 5, 5)), np.ones((1, 2, 5, 5)))
    with pytest.raises(nn.ShapeError):
        ops.conv2d(np.ones((1, 2, 2, 2)), np.ones((1, 2, 3, 3)))


# ------------------------------------------------------------- depthwise

def test_depthwise_delta_identity():
    x = np.random.default_rng(1).normal(size=(2, 4, 6, 5))
    w = np.zeros((4, 1, 3, 3))
    w[:, 0, 1, 1] = 1
    np.testing.assert_array_equal(ops.depthwise_conv3x3(x, w).data, x)


def test_depthwise_single_channel_is_conv():
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=(2, 1, 7, 6)), rng.normal(size=(1, 1, 3, 3))
    for s in (1, 2):
        np.testing.assert_allclose(ops.depthwise_conv3x3(x, w, s).data, ops.conv2d(x, w, stride=s).data,
                                   rtol=0, atol=1e-13)


@pytest.mark.parametrize("seed", range(20))
def test_depthwise_matches_naive(seed):
    rng = np.random.default_rng(100 + seed)
    c = int(rng.integers(1, 6))
    x = rng.normal(size=(int(rng.integers(1, 3)), c, *rng.integers(3, 9, size=2)))
    w = rng.normal(size=(c, 1, 3, 3))
    s = int(rng.integers(1, 3))
    assert np.abs(ops.depthwise_conv3x3(x, w, s).data - depthwise_naive(x, w, s)).max() <= 1e-12


def test_depthwise_channel_mismatch():
    with pytest.raises(nn.ShapeError):
        ops.depthwise_conv3x3(np.ones((1, 3, 4, 4)), np.ones((2, 1, 3, 3)))


# ------------------------------------------------------------ batch norm

def test_batch_norm_standardized_input_passes_through():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(8, 2, 6, 6))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = ops.batch_norm(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2)).data
    np.testing.assert_allclose(out, x, rtol=1e-5)
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-12)


def test_batch_norm_constant_channel_gives_shift():
    x = np.full((4, 1, 3, 3), 7.0)
    out = ops.batch_norm(x, np.array([2.0]), np.array([0.25]), np.zeros(1), np.ones(1)).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, 0.25, atol=1e-12)


def test_batch_norm_running_stats():
    rng = np.random.default_rng(4)
    x = rng.normal(3.0, 2.0, size=(4, 3, 5, 5))
    rm, rv = np.zeros(3), np.ones(3)
    ops.batch_norm(x, np.ones(3), np.zeros(3), rm, rv, training=True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1), rtol=1e-12)
    # inference uses the running statistics and leaves them alone
    before = rm.copy()
    out = ops.batch_norm(x, np.ones(3), np.zeros(3), rm, rv, training=False).data
    np.testing.assert_array_equal(rm, before)
    expect = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
    np.testing.assert_allclose(out, expect, rtol=1e-12)


# ----------------------------------------------------- elementwise / shape

def test_relu6_sigmoid_upsample():
    np.testing.assert_array_equal(ops.relu6(np.array([-1.0, 3.0, 9.0])).data, [0, 3, 6])
    assert ops.sigmoid_act(np.array([0.0])).data[0] == 0.5
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    up = ops.upsample2x_nearest(x).data[0, 0]
    np.testing.assert_array_equal(up, [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])


def test_add_and_concat_shape_errors():
    with pytest.raises(nn.ShapeError):
        ops.add(np.ones((1, 2, 3, 3)), np.ones((1, 2, 3, 4)))
    with pytest.raises(nn.ShapeError):
        ops.concat_channels(np.ones((1, 2, 3, 3)), np.ones((1, 2, 4, 4)))
    assert ops.concat_channels(np.ones((2, 2, 3, 3)), np.zeros((2, 5, 3, 3))).shape == (2, 7, 3, 3)


@given(arrays(np.float64, (2, 3, 4), elements=st.floats(-1e6, 1e6)))
def test_forward_finite(x):
    for f in (ops.relu6, ops.sigmoid_act):
        assert np.all(np.isfinite(f(x).data))
    z = ops.bce_with_logits(x, (x > 0).astype(float))
    assert np.isfinite(z.data)


# ---------------------------------------------------------------- losses

def test_mse_examples():
    p = np.random.default_rng(5).normal(size=(2, 3))
    assert ops.mse(p, p, np.ones_like(p)).data == 0
    t = np.zeros((2, 3))
    pred = np.zeros((2, 3))
    pred[1, 2] = 2.0
    m = np.zeros((2, 3))
    m[1, 2] = 1
    assert ops.mse(pred, t, m).data == 4.0


def test_mse_vs_scalar_loop():
    rng = np.random.default_rng(6)
    for _ in range(20):
        p, t = rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 2, 3, 3))
        m = (rng.random(p.shape) < 0.4).astype(float)
        num = den = 0.0
        for i in np.ndindex(p.shape):
            num += m[i] * (p[i] - t[i]) ** 2
            den += m[i]
        assert abs(ops.mse(p, t, m).data - num / max(den, 1.0)) <= 1e-12


def test_bce_examples():
    assert abs(ops.bce_with_logits(np.array([0.0]), np.array([1.0]), np.array([1.0])).data - np.log(2)) < 1e-15
    assert ops.bce_with_logits(np.array([50.0]), np.array([1.0])).data < 1e-20
    big = ops.bce_with_logits(np.array([1e4, -1e4]), np.array([0.0, 1.0])).data
    assert np.isclose(big, 1e4)


def _bce_decimal(z, t):
    getcontext().prec = 50
    z, t = Decimal(float(z)), Decimal(float(t))
    one = Decimal(1)
    # log sigma(z) = -log(1 + e^-z); log(1 - sigma(z)) = -log(1 + e^z)
    return t * (one + (-z).exp()).ln() + (one - t) * (one + z.exp()).ln()


def test_bce_vs_extended_precision():
    rng = np.random.default_rng(7)
    for _ in range(50):
        z = rng.normal(scale=8, size=6)
        t = rng.random(6)
        w = rng.uniform(0, 2, 6)
        ref = sum(Decimal(float(wi)) * _bce_decimal(zi, ti) for zi, ti, wi in zip(z, t, w))
        ref /= Decimal(float(w.sum()))
        assert abs(ops.bce_with_logits(z, t, w).data - float(ref)) <= 1e-10


def test_line_deviation_constant_offset():
    S = 4
    t = np.zeros((1, 2 * S, 2, 2))
    p = t.copy()
    p[:, 0::2] += 3
    p[:, 1::2] += 4
    m = np.zeros((1, 2, 2))
    m[0, 1, 0] = 1
    assert ops.line_deviation(p, t, m).data == pytest.approx(5.0, abs=1e-12)
    assert ops.line_deviation(t, t, m).data == 0


# -------------------------------------------------------------- backward

def test_backward_square():
    p = nn.Parameter(np.array([1.0, -2.0, 3.5]), "p")
    q = nn.Parameter(np.array([4.0]), "q")
    q.zero_grad()
    nn.backward(ops.sum_all(ops.mul(p, p)))
    np.testing.assert_array_equal(p.grad, 2 * p.data)
    np.testing.assert_array_equal(q.grad, 0)


def test_backward_accumulates_and_repeats():
    p = nn.Parameter(np.array([0.5, 1.5]), "p")
    loss = ops.sum_all(ops.mul(ops.sigmoid_act(p), p))
    nn.backward(loss)
    g1 = p.grad.copy()
    nn.backward(loss)
    np.testing.assert_array_equal(p.grad, 2 * g1)
    p.zero_grad()
    nn.backward(loss)
    np.testing.assert_array_equal(p.grad, g1)


def test_backward_needs_scalar():
    p = nn.Parameter(np.ones(3), "p")
    with pytest.raises(ValueError):
        nn.backward(ops.mul(p, p))


def test_backward_reverse_order_on_diamond():
    # a feeds two branches that merge; gradient must be summed before use
    p = nn.Parameter(np.array([2.0]), "p")
    a = ops.relu6(p)
    b = ops.add(ops.mul(a, a), ops.scale(a, 3.0))
    nn.backward(ops.sum_all(b))
    assert p.grad[0] == 2 * 2.0 + 3.0


def _micro_net(rng):
    w1 = nn.Parameter(rng.normal(size=(3, 2, 3, 3)) * 0.5, "w1")
    w2 = nn.Parameter(rng.normal(size=(2, 3, 1, 1)) * 0.5, "w2")
    g = nn.Parameter(rng.uniform(0.5, 1.5, 3), "g")
    b = nn.Parameter(rng.normal(size=3), "b")
    x = rng.normal(size=(2, 2, 5, 5))
    t = rng.normal(size=(2, 2, 5, 5))
    m = np.ones_like(t)

    def loss():
        h = ops.conv2d(x, w1)
        h = ops.batch_norm(h, g, b, np.zeros(3), np.ones(3), training=True)
        h = ops.relu6(h)
        return ops.mse(ops.conv2d(h, w2), t, m)

    return [w1, w2, g, b], loss


def test_micro_net_finite_differences():
    for seed in range(5):
        params, loss = _micro_net(np.random.default_rng(seed))
        nn.backward(loss())
        for p in params:
            def f():
                with nn.no_grad():
                    return float(loss().data)
            num = numeric_grad(f, p.data, 1e-5)
            assert relative_error(p.grad, num) <= TOLERANCE, p.name


def test_op_gradient_suite():
    worst = run_op_checks(range(20))
    assert set(worst) >= {"conv2d_3x3", "conv2d_1x1", "depthwise_conv3x3", "batch_norm_train",
                          "batch_norm_infer", "relu6", "sigmoid", "add", "upsample2x_nearest",
                          "concat_channels", "mse", "bce_with_logits"}
    for name, err in worst.items():
        assert err <= TOLERANCE, name


# ------------------------------------------------------------------- SGD

def test_sgd_examples():
    p = nn.Parameter(np.array([1.0]), "p", "head")
    p.grad = np.array([0.1])
    vel = {}
    nn.sgd_momentum_step([p], {"head": 0.1, "backbone": 0.0}, 0.9, vel)
    assert p.data[0] == pytest.approx(0.99, abs=1e-15)
    assert vel["p"][0] == pytest.approx(0.1, abs=1e-15)

    q = nn.Parameter(np.array([3.0]), "q")
    vel = {}
    for _ in range(5):
        q.grad = np.zeros(1)
        nn.sgd_momentum_step([q], {"backbone": 0.5}, 0.9, vel)
    assert q.data[0] == 3.0


def test_sgd_two_steps_recurrence():
    p = nn.Parameter(np.array([0.7]), "p")
    opt = nn.SGD([p], momentum=0.9)
    g, lr = 0.3, 0.05
    x, v = 0.7, 0.0
    for _ in range(2):
        p.grad = np.array([g])
        opt.step({"backbone": lr})
        v = 0.9 * v + g
        x = x - lr * v
    assert abs(p.data[0] - x) <= 1e-15


def test_sgd_missing_grad():
    p = nn.Parameter(np.ones(2), "p")
    with pytest.raises(nn.MissingGradError):
        nn.SGD([p]).step({"backbone": 0.1})


def test_dtype_switch():
    with nn.default_dtype(np.float32):
        assert nn.Tensor([1.0]).dtype == np.float32
    assert nn.Tensor([1.0]).dtype == np.float64
    with pytest.raises(ValueError):
        nn.set_default_dtype(np.int32)
