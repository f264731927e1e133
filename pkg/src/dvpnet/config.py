"""Flat ``section.key = value`` run configuration.

Example file::

    # comments and blank lines are ignored
    model.S = 23
    model.width_multiplier = 0.25
    train.epochs = 60

Values are parsed by the type of the key's default; unknown keys are errors.
Command-line ``--set key=value`` overrides the file.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields, replace

from .loss import LossWeights
from .model import FULL_STAGES, MICRO_STAGES, ModelConfig
from .synthgen import SceneConfig
from .trainer import TrainConfig

CONFIG_ENV = "DVPNET_CONFIG"
STAGE_PRESETS = {"full": FULL_STAGES, "micro": MICRO_STAGES}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    thresholds: str = "1,2,3,5"
    batch_size: int = 32
    split: str = "test"
    curve_step: float = 0.25
    curve_max: float = 10.0
    warmup: int = 20
    reps: int = 200


@dataclass(frozen=True)
class AblateConfig:
    S_values: str = "3,7,11"
    subsets: str = "1;1,2;1,2,3"
    train_count: int = 200
    test_count: int = 50
    epochs: int = 5


@dataclass(frozen=True)
class RunOptions:
    numeric_width: int = 32
    workers: int = 1


SECTIONS = {
    "scene": SceneConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "loss": LossWeights,
    "eval": EvalConfig,
    "ablate": AblateConfig,
    "run": RunOptions,
}
# keys that are derived or replaced by a preset name
_SKIP = {("loss", "S")}
_OVERRIDES = {("model", "stages"): "full"}


def _defaults():
    out = {}
    for section, cls in SECTIONS.items():
        inst = cls()
        for f in fields(cls):
            if (section, f.name) in _SKIP:
                continue
            out[f"{section}.{f.name}"] = _OVERRIDES.get((section, f.name), getattr(inst, f.name))
    return out


DEFAULTS = _defaults()


def _parse(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


def parse_lines(lines, source="<config>"):
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _parse(key, val, DEFAULTS[key])
    return values


class RunConfig:
    """Merged view: defaults < config file < command-line overrides."""

    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown key {k!r}")
            self.values[k] = v if not isinstance(v, str) else _parse(k, v, DEFAULTS[k])

    @classmethod
    def load(cls, path=None, overrides=()):
        """``path`` falls back to the ``DVPNET_CONFIG`` environment variable."""
        path = path or os.environ.get(CONFIG_ENV)
        values = {}
        if path:
            with open(path, encoding="utf-8") as f:
                values.update(parse_lines(f, str(path)))
        for item in overrides:
            values.update(parse_lines([item], "--set"))
        return cls(values)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        self.values[key] = value

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name):
        p = name + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def _build(self, name, **extra):
        try:
            return SECTIONS[name](**{**self.section(name), **extra})
        except (ValueError, TypeError) as e:
            raise ConfigError(f"[{name}] {e}") from None

    def scene(self) -> SceneConfig:
        return self._build("scene")

    def model(self) -> ModelConfig:
        preset = self.values["model.stages"]
        if preset not in STAGE_PRESETS:
            raise ConfigError(f"model.stages must be one of {sorted(STAGE_PRESETS)}, got {preset!r}")
        return self._build("model", stages=STAGE_PRESETS[preset])

    def train(self) -> TrainConfig:
        return self._build("train")

    def loss(self) -> LossWeights:
        return self._build("loss", S=self.values["model.S"])

    def eval(self) -> EvalConfig:
        return self._build("eval")

    def ablate(self) -> AblateConfig:
        return self._build("ablate")

    def run(self) -> RunOptions:
        r = self._build("run")
        if r.numeric_width not in (32, 64):
            raise ConfigError("run.numeric_width must be 32 or 64")
        return r

    def dump(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.values.items())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def describe_keys() -> str:
    """Every key with its default, for --help."""
    width = max(len(k) for k in DEFAULTS)
    return "\n".join(f"  {k:<{width}}  {_fmt(v)}" for k, v in DEFAULTS.items())


def parse_floats(text):
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def parse_ints(text):
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def parse_subsets(text):
    return [parse_ints(part) for part in str(text).split(";") if part.strip()]
