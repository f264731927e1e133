import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dvpnet import nn
from dvpnet.codec import HeadLayout, encode_batch, grids_for
from dvpnet.loss import LossWeights, micro_batch, total_loss
from dvpnet.model import (FULL_STAGES, Bottleneck, ConfigError, ModelConfig, StageSpec, _Builder,
                          build, micro_config, param_groups, scale_channels)
from dvpnet.nn import ops

SMALL = dict(input_size=128, width_multiplier=0.25, S=7)


def test_default_config_constants():
    cfg = ModelConfig()
    assert cfg.B == 95
    assert cfg.grid_sizes == (13, 26, 52)
    assert ModelConfig(S=7).B == 31
    assert ModelConfig(**SMALL).grid_sizes == (4, 8, 16)


def test_table_topology():
    rows = [(s.operator, s.t, s.c, s.n, s.s) for s in FULL_STAGES]
    assert rows[:9] == [("conv", 1, 32, 1, 2), ("bottleneck", 1, 16, 1, 1), ("bottleneck", 6, 24, 2, 2),
                        ("bottleneck", 6, 32, 3, 2), ("bottleneck", 6, 64, 4, 2),
                        ("bottleneck", 6, 96, 3, 1), ("bottleneck", 6, 160, 3, 2),
                        ("bottleneck", 6, 320, 1, 1), ("bottleneck", 6, 1280, 1, 1)]
    yolos = [s for s in FULL_STAGES if s.operator == "yolo"]
    assert [s.c for s in yolos] == [320, 64, 24] and all(s.n == 3 for s in yolos)


@pytest.mark.slow
def test_full_size_forward():
    net = build(ModelConfig(), seed=0).eval()
    with nn.no_grad(), nn.default_dtype(np.float32):
        net32 = build(ModelConfig(), seed=0, dtype=np.float32).eval()
        out = net32(np.zeros((1, 3, 416, 416), np.float32))
    assert [o.shape for o in out] == [(1, 95, 13, 13), (1, 95, 26, 26), (1, 95, 52, 52)]
    assert net.parameter_count() == net32.parameter_count()


def test_small_forward_shapes_and_finite():
    net = build(ModelConfig(**SMALL), seed=1)
    x = np.random.default_rng(0).random((2, 3, 128, 128))
    out = net(x)
    assert [o.shape for o in out] == [(2, 31, 4, 4), (2, 31, 8, 8), (2, 31, 16, 16)]
    assert all(np.all(np.isfinite(o.data)) for o in out)


def test_taps_match_layer_rows():
    net = build(ModelConfig(**SMALL))
    # stride-16 tap is the last 96-channel row, stride-8 the last 32-channel row
    chans = {s: net.backbone[i].project.c_out for i, s in net.taps.items()}
    assert chans == {32: scale_channels(1280, 0.25), 16: scale_channels(96, 0.25),
                     8: scale_channels(32, 0.25)}


def test_identical_images_identical_outputs():
    net = build(ModelConfig(**SMALL), seed=2).eval()
    img = np.random.default_rng(1).random((1, 3, 128, 128))
    with nn.no_grad():
        out = net(np.concatenate([img, img]))
    for o in out:
        np.testing.assert_array_equal(o.data[0], o.data[1])


def test_forward_rejects_wrong_shape():
    net = build(ModelConfig(**SMALL))
    with pytest.raises(nn.ShapeError):
        net(np.zeros((1, 3, 96, 96)))
    with pytest.raises(nn.ShapeError):
        net(np.zeros((1, 1, 128, 128)))


@pytest.mark.parametrize("kw", [dict(input_size=100), dict(input_size=64), dict(width_multiplier=0),
                                dict(width_multiplier=1.5), dict(S=1),
                                dict(stages=FULL_STAGES[:-2]), dict(conf_prior=1.0),
                                dict(conf_prior=-0.1)])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_stage_spec_validation():
    with pytest.raises(ConfigError):
        StageSpec("pool")
    with pytest.raises(ConfigError):
        StageSpec("conv", 1, 8, 1, 3)
    with pytest.raises(ConfigError):
        StageSpec("conv", 1, 8, 0, 1)


def test_bottleneck_residual_identity():
    b = _Builder(np.random.default_rng(0), np.float64)
    blk = Bottleneck(b, "blk", "backbone", 8, 6, 8, 1)
    assert blk.residual and blk.hidden == 48
    assert blk.expand.weight.shape == (48, 8, 1, 1)
    blk.project.weight.data[...] = 0
    x = np.random.default_rng(1).normal(size=(2, 8, 6, 6))
    for training in (True, False):
        np.testing.assert_allclose(blk(nn.Tensor(x), training).data, x, atol=1e-12)


def test_bottleneck_stride_two_halves():
    b = _Builder(np.random.default_rng(0), np.float64)
    blk = Bottleneck(b, "blk", "backbone", 4, 6, 8, 2)
    assert not blk.residual
    assert blk(nn.Tensor(np.ones((1, 4, 10, 10))), True).shape == (1, 8, 5, 5)


def test_param_groups_partition():
    net = build(ModelConfig(**SMALL))
    bb, hd = param_groups(net)
    names_b, names_h = {p.name for p in bb}, {p.name for p in hd}
    assert not names_b & names_h
    assert len(names_b) + len(names_h) == len(net.params)
    assert all(n.startswith("backbone.") for n in names_b)
    assert all(n.startswith("head.") for n in names_h)
    assert len(set(p.name for p in net.params)) == len(net.params)


def test_width_reduces_parameters():
    counts = [build(ModelConfig(input_size=128, width_multiplier=w, S=7)).parameter_count()
              for w in (1.0, 0.5, 0.25)]
    assert counts[0] > counts[1] > counts[2]


@settings(max_examples=15)
@given(st.sampled_from([96, 128, 160]), st.sampled_from([0.1, 0.25, 0.5]), st.integers(2, 12))
def test_output_contract_property(size, width, S):
    net = build(ModelConfig(input_size=size, width_multiplier=width, S=S, fusion=S % 2 == 0))
    with nn.no_grad():
        out = net(np.zeros((1, 3, size, size)))
    assert [o.shape[1] for o in out] == [3 + 4 * S] * 3
    assert [o.shape[2] for o in out] == [size // 32, size // 16, size // 8]


def test_fusion_flag_changes_head_inputs():
    fused = build(ModelConfig(**SMALL))
    plain = build(ModelConfig(**SMALL, fusion=False))
    assert plain.parameter_count() < fused.parameter_count()
    with nn.no_grad():
        out = plain(np.zeros((1, 3, 128, 128)))
    assert [o.shape[2] for o in out] == [4, 8, 16]


def test_no_dead_parameters():
    cfg = micro_config()
    net = build(cfg, seed=0)
    x, targets, masks = micro_batch(cfg, seed=0)
    net.zero_grad()
    nn.backward(total_loss(net(x), targets, masks, LossWeights(S=cfg.S)).total)
    dead = [p.name for p in net.params if not np.any(p.grad)]
    assert dead == []


def test_config_dict_round_trip():
    cfg = ModelConfig(**SMALL, fusion=False)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_build_is_seeded():
    a, b = build(ModelConfig(**SMALL), seed=3), build(ModelConfig(**SMALL), seed=3)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p.data, q.data)


def test_conf_prior_sets_only_the_confidence_bias():
    lay = HeadLayout(3)
    plain = build(micro_config(S=3), seed=0)
    prior = build(micro_config(S=3, conf_prior=0.01), seed=0)
    for a, b in zip(plain.detections, prior.detections):
        assert b.bias.data[lay.conf] == pytest.approx(np.log(0.01 / 0.99), rel=1e-12)
        others = np.delete(np.arange(lay.B), lay.conf)
        assert np.all(b.bias.data[others] == 0) and np.all(a.bias.data == 0)
        np.testing.assert_array_equal(a.weight.data, b.weight.data)
