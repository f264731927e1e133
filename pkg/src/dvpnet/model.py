"""MobileNet-v2-style backbone with a three-scale grid detection head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import nn
from .codec import HeadLayout
from .nn import ops
from .nn.tensor import Parameter, Tensor, get_default_dtype


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StageSpec:
    """One row of the layer table: ``n`` repeats, first with stride ``s``.

    ``c`` is ``None`` for detection rows, whose width is the head layout's B.
    """

    operator: str
    t: int = 1
    c: Optional[int] = None
    n: int = 1
    s: int = 1

    def __post_init__(self):
        if self.operator not in ("conv", "bottleneck", "yolo", "detection"):
            raise ConfigError(f"unknown operator {self.operator!r}")
        if self.s not in (1, 2) or self.n < 1 or self.t < 1:
            raise ConfigError(f"invalid stage {self}")


FULL_STAGES = (
    StageSpec("conv", 1, 32, 1, 2),
    StageSpec("bottleneck", 1, 16, 1, 1),
    StageSpec("bottleneck", 6, 24, 2, 2),
    StageSpec("bottleneck", 6, 32, 3, 2),
    StageSpec("bottleneck", 6, 64, 4, 2),
    StageSpec("bottleneck", 6, 96, 3, 1),
    StageSpec("bottleneck", 6, 160, 3, 2),
    StageSpec("bottleneck", 6, 320, 1, 1),
    StageSpec("bottleneck", 6, 1280, 1, 1),
    StageSpec("yolo", 1, 320, 3, 1),
    StageSpec("detection"),
    StageSpec("yolo", 1, 64, 3, 1),
    StageSpec("detection"),
    StageSpec("yolo", 1, 24, 3, 1),
    StageSpec("detection"),
)

# tiny topology for finite-difference checks: strides 8/16/32 still tapped
MICRO_STAGES = (
    StageSpec("conv", 1, 4, 1, 2),
    StageSpec("bottleneck", 1, 4, 1, 2),
    StageSpec("bottleneck", 2, 4, 1, 2),
    StageSpec("bottleneck", 2, 4, 1, 2),
    StageSpec("bottleneck", 2, 4, 1, 2),
    StageSpec("yolo", 1, 4, 1, 1),
    StageSpec("detection"),
    StageSpec("yolo", 1, 4, 1, 1),
    StageSpec("detection"),
    StageSpec("yolo", 1, 4, 1, 1),
    StageSpec("detection"),
)

STRIDES = (32, 16, 8)


def scale_channels(c: int, width: float) -> int:
    """Round ``c * width`` to the nearest multiple of 4, never below 4."""
    return max(4, 4 * int(math.floor(c * width / 4 + 0.5)))


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 416
    width_multiplier: float = 1.0
    S: int = 23
    stages: tuple = FULL_STAGES
    fusion: bool = True
    # initial confidence of every cell (bias = logit); 0 leaves the bias at zero
    conf_prior: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(
            s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages))
        if self.input_size % 32 or self.input_size < 96:
            raise ConfigError(f"input_size must be a multiple of 32 and >= 96, got {self.input_size}")
        if not 0 < self.width_multiplier <= 1:
            raise ConfigError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")
        if self.S < 2:
            raise ConfigError(f"S must be >= 2, got {self.S}")
        if not 0 <= self.conf_prior < 1:
            raise ConfigError(f"conf_prior must be in [0, 1), got {self.conf_prior}")
        ops_ = [s.operator for s in self.stages]
        n_back = sum(o in ("conv", "bottleneck") for o in ops_)
        if ops_[:n_back].count("conv") + ops_[:n_back].count("bottleneck") != n_back or ops_[0] != "conv":
            raise ConfigError("stage table must start with conv/bottleneck rows")
        if ops_[n_back:] != ["yolo", "detection"] * 3:
            raise ConfigError("head must be three yolo/detection row pairs")
        for s in self.stages:
            if s.operator != "detection" and (s.c is None or s.c <= 0):
                raise ConfigError(f"stage {s} needs a positive channel count")
        stride = 1
        seen = set()
        for s in self.backbone_stages:
            stride *= s.s
            seen.add(stride)
        if stride != 32 or not {8, 16} <= seen:
            raise ConfigError("backbone must reach strides 8, 16 and 32")

    @property
    def backbone_stages(self):
        return [s for s in self.stages if s.operator in ("conv", "bottleneck")]

    @property
    def yolo_stages(self):
        return [s for s in self.stages if s.operator == "yolo"]

    @property
    def B(self) -> int:
        return 3 + 4 * self.S

    @property
    def grid_sizes(self):
        return tuple(self.input_size // s for s in STRIDES)

    def to_dict(self):
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stages"] = tuple(StageSpec(**s) for s in d.get("stages", [asdict(s) for s in FULL_STAGES]))
        return cls(**d)


def micro_config(**kw) -> ModelConfig:
    return ModelConfig(**{"input_size": 96, "width_multiplier": 1.0, "S": 2,
                          "stages": MICRO_STAGES, **kw})


# ---------------------------------------------------------------- layers

class _Builder:
    """Creates named, grouped parameters with fan-in-scaled uniform init."""

    def __init__(self, rng, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params = []
        self.buffers = {}

    def conv_weight(self, name, group, shape):
        fan_in = int(np.prod(shape[1:]))
        bound = 1.0 / math.sqrt(fan_in)
        w = self.rng.uniform(-bound, bound, size=shape)
        p = Parameter(w, name, group, dtype=self.dtype)
        self.params.append(p)
        return p

    def vector(self, name, group, value, n):
        p = Parameter(np.full(n, value), name, group, dtype=self.dtype)
        self.params.append(p)
        return p

    def buffer(self, name, value, n):
        buf = np.full(n, value, dtype=np.float64)
        self.buffers[name] = buf
        return buf


class ConvBN:
    """conv (dense or depthwise) -> batch norm -> optional ReLU6."""

    def __init__(self, b: _Builder, name, group, c_in, c_out, k, stride, act=True, depthwise=False):
        shape = (c_out, 1, 3, 3) if depthwise else (c_out, c_in, k, k)
        self.weight = b.conv_weight(f"{name}.weight", group, shape)
        self.bn_scale = b.vector(f"{name}.bn.scale", group, 1.0, c_out)
        self.bn_shift = b.vector(f"{name}.bn.shift", group, 0.0, c_out)
        self.running_mean = b.buffer(f"{name}.bn.running_mean", 0.0, c_out)
        self.running_var = b.buffer(f"{name}.bn.running_var", 1.0, c_out)
        self.stride = stride
        self.act = act
        self.depthwise = depthwise
        self.c_out = c_out

    def __call__(self, x, training):
        if self.depthwise:
            y = ops.depthwise_conv3x3(x, self.weight, self.stride)
        else:
            y = ops.conv2d(x, self.weight, stride=self.stride)
        y = ops.batch_norm(y, self.bn_scale, self.bn_shift, self.running_mean,
                           self.running_var, training=training)
        return ops.relu6(y) if self.act else y


class Bottleneck:
    """Inverted residual: 1x1 expand -> 3x3 depthwise -> linear 1x1 project."""

    def __init__(self, b, name, group, c_in, t, c_out, stride):
        hidden = t * c_in
        # t = 1 has nothing to expand
        self.expand = ConvBN(b, f"{name}.expand", group, c_in, hidden, 1, 1) if t > 1 else None
        self.depthwise = ConvBN(b, f"{name}.depthwise", group, hidden, hidden, 3, stride, depthwise=True)
        self.project = ConvBN(b, f"{name}.project", group, hidden, c_out, 1, 1, act=False)
        self.residual = stride == 1 and c_in == c_out
        self.hidden = hidden

    def __call__(self, x, training):
        y = self.expand(x, training) if self.expand is not None else x
        y = self.project(self.depthwise(y, training), training)
        return ops.add(x, y) if self.residual else y


class YoloBlock:
    """``n`` pairs of 1x1 (c) and 3x3 (2c) conv-norm-ReLU6 layers."""

    def __init__(self, b, name, c_in, c, n):
        self.layers = []
        for i in range(n):
            self.layers.append(ConvBN(b, f"{name}.{2 * i}", "head", c_in, c, 1, 1))
            self.layers.append(ConvBN(b, f"{name}.{2 * i + 1}", "head", c, 2 * c, 3, 1))
            c_in = 2 * c
        self.c_out = 2 * c

    def __call__(self, x, training):
        for layer in self.layers:
            x = layer(x, training)
        return x


class Detection:
    def __init__(self, b, name, c_in, layout: HeadLayout, conf_prior=0.0):
        self.weight = b.conv_weight(f"{name}.weight", "head", (layout.B, c_in, 1, 1))
        self.bias = b.vector(f"{name}.bias", "head", 0.0, layout.B)
        if conf_prior > 0:
            self.bias.data[layout.conf] = np.log(conf_prior / (1 - conf_prior))

    def __call__(self, x, training):
        return ops.conv2d(x, self.weight, self.bias)


class DVPNet:
    def __init__(self, config: ModelConfig, params, buffers, backbone, taps, yolos, detections):
        self.config = config
        self.params = params
        self.buffers = buffers
        self.backbone = backbone
        self.taps = taps
        self.yolos = yolos
        self.detections = detections
        self.training = True

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    @property
    def dtype(self):
        return self.params[0].dtype

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params)

    def named_parameters(self):
        return {p.name: p for p in self.params}

    def zero_grad(self):
        # zeros rather than None: parameters the loss does not reach get grad 0
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def features(self, x):
        """Backbone taps at strides 32, 16 and 8 (coarsest first)."""
        tapped = {}
        for i, layer in enumerate(self.backbone):
            x = layer(x, self.training)
            if i in self.taps:
                tapped[self.taps[i]] = x
        return [tapped[s] for s in STRIDES]

    def head(self, feats):
        preds = []
        up = None
        for yolo, det, feat in zip(self.yolos, self.detections, feats):
            if up is not None and self.config.fusion:
                feat = ops.concat_channels(ops.upsample2x_nearest(up), feat)
            y = yolo(feat, self.training)
            preds.append(det(y, self.training))
            up = y
        return preds

    def forward(self, batch):
        x = batch if isinstance(batch, Tensor) else Tensor(batch, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (self.config.input_size,) * 2:
            raise ops.ShapeError(
                f"expected N x 3 x {self.config.input_size} x {self.config.input_size}, got {x.shape}")
        return self.head(self.features(x))

    __call__ = forward


def build(config: ModelConfig, seed: int = 0, dtype=None) -> DVPNet:
    b = _Builder(np.random.default_rng(seed), dtype or get_default_dtype())
    w = config.width_multiplier
    backbone = []
    # tap index -> stride; the last layer reaching each stride is tapped
    taps = {}
    c_in, stride = 3, 1
    for si, st in enumerate(config.backbone_stages):
        c_out = scale_channels(st.c, w)
        for r in range(st.n):
            s = st.s if r == 0 else 1
            name = f"backbone.{si}.{r}"
            if st.operator == "conv":
                layer = ConvBN(b, name, "backbone", c_in, c_out, 3, s)
            else:
                layer = Bottleneck(b, name, "backbone", c_in, st.t, c_out, s)
            backbone.append(layer)
            stride *= s
            c_in = c_out
            if stride in STRIDES:
                taps = {k: v for k, v in taps.items() if v != stride}
                taps[len(backbone) - 1] = stride
    tap_channels = {}
    for i, s in taps.items():
        layer = backbone[i]
        tap_channels[s] = layer.c_out if isinstance(layer, ConvBN) else layer.project.c_out
    yolos, dets = [], []
    prev = 0
    for k, (st, s) in enumerate(zip(config.yolo_stages, STRIDES)):
        cin = tap_channels[s] + (prev if config.fusion else 0)
        yolo = YoloBlock(b, f"head.yolo{k}", cin, scale_channels(st.c, w), st.n)
        yolos.append(yolo)
        dets.append(Detection(b, f"head.detect{k}", yolo.c_out, HeadLayout(config.S), config.conf_prior))
        prev = yolo.c_out
    names = [p.name for p in b.params]
    assert len(names) == len(set(names))
    return DVPNet(config, b.params, b.buffers, backbone, taps, yolos, dets)


def param_groups(net: DVPNet):
    backbone = [p for p in net.params if p.group == "backbone"]
    head = [p for p in net.params if p.group == "head"]
    return backbone, head


def with_config(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, **changes)
