"""SGD training loop with per-group learning rates and a step decay."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import HeadLayout, encode_batch, grids_for, parse_positive_scales
from .loss import LossWeights, total_loss
from .nn.optim import SGD
from .synthgen import augment

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "total", "coord", "conf", "line_left", "line_right",
               "lr_backbone", "lr_head")
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 16
    lr_backbone: float = 0.001
    lr_head: float = 0.01
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 20
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True
    flip_prob: float = 0.5
    max_rot_deg: float = 10.0
    checkpoint_every: int = 0
    positive_scales: str = "all"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr_decay_every < 1:
            raise ValueError("epochs, batch_size and lr_decay_every must be positive")
        if self.lr_backbone <= 0 or self.lr_head <= 0 or self.lr_decay_factor <= 0:
            raise ValueError("learning rates and decay factor must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        parse_positive_scales(self.positive_scales)


def lr_at(config: TrainConfig, group: str, epoch: int) -> float:
    base = {"backbone": config.lr_backbone, "head": config.lr_head}[group]
    return base / config.lr_decay_factor ** (epoch // config.lr_decay_every)


def images_to_batch(scenes, dtype) -> np.ndarray:
    return np.stack([s.image.transpose(2, 0, 1) for s in scenes]).astype(dtype)


@dataclass
class TrainResult:
    rows: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    epochs_run: int = 0


def _velocity_arrays(opt):
    return {f"velocity/{k}": v for k, v in opt.velocity.items()}


def train(net, train_set, config: TrainConfig, weights: Optional[LossWeights] = None,
          out_dir=None, scales=None, resume=None, log_path=None) -> TrainResult:
    """Train ``net`` in place on a list of AnnotatedScene.

    ``resume`` is a checkpoint path written by an earlier call; training
    continues from the epoch after the one it recorded. With ``out_dir``
    set, checkpoints go to ``epoch_XXXX.ckpt`` (every ``checkpoint_every``
    epochs) and ``final.ckpt``; the CSV log to ``train_log.csv``.
    """
    if not train_set:
        raise ValueError("empty training set")
    weights = weights or LossWeights(S=net.config.S)
    layout = HeadLayout(net.config.S)
    grids = grids_for(net.config.input_size)
    opt = SGD(net.params, config.momentum)
    positive = parse_positive_scales(config.positive_scales)
    start_epoch, step = 0, 0
    if resume is not None:
        loaded, state, extra = load_checkpoint(resume)
        for p, q in zip(net.params, loaded.params):
            p.data[...] = q.data
        for name, buf in net.buffers.items():
            buf[...] = loaded.buffers[name]
        opt.velocity = {k.split("/", 1)[1]: np.array(v, dtype=net.dtype)
                        for k, v in extra.items() if k.startswith("velocity/")}
        start_epoch, step = state["epoch"] + 1, state["step"]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log_path = log_path or (out / "train_log.csv" if out is not None else None)
    result = TrainResult()
    writer = fh = None
    if log_path is not None:
        new = resume is None or not Path(log_path).exists()
        fh = open(log_path, "w" if new else "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        if new:
            writer.writeheader()
    net.train()
    try:
        for epoch in range(start_epoch, config.epochs):
            rng = np.random.default_rng([config.seed, epoch])
            lrs = {g: lr_at(config, g, epoch) for g in ("backbone", "head")}
            order = rng.permutation(len(train_set))
            for b0 in range(0, len(order), config.batch_size):
                scenes = [train_set[i] for i in order[b0:b0 + config.batch_size]]
                if config.augment:
                    scenes = [augment(s, rng, config.flip_prob, config.max_rot_deg) for s in scenes]
                x = images_to_batch(scenes, net.dtype)
                targets, masks = encode_batch(scenes, grids, layout, positive_scales=positive)
                bd = total_loss(net(x), targets, masks, weights, layout, scales)
                value = float(bd.total.data)
                if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
                    raise DivergenceError(f"loss {value} at epoch {epoch}, step {step}")
                opt.zero_grad()
                nn.backward(bd.total)
                opt.step(lrs)
                row = {"epoch": epoch, "step": step, **bd.as_row(),
                       "lr_backbone": lrs["backbone"], "lr_head": lrs["head"]}
                result.rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                step += 1
            if fh is not None:
                fh.flush()
            log.info("epoch %d  loss %.4f", epoch, result.rows[-1]["total"] if result.rows else float("nan"))
            result.epochs_run += 1
            last = epoch == config.epochs - 1
            periodic = config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0
            if out is not None and (periodic or last):
                state = {"epoch": epoch, "step": step, "train_config": vars(config).copy()}
                arrays = _velocity_arrays(opt)
                if periodic:
                    path = out / f"epoch_{epoch + 1:04d}.ckpt"
                    save_checkpoint(path, net, state, arrays)
                    result.checkpoints.append(path)
                if last:
                    path = out / "final.ckpt"
                    save_checkpoint(path, net, state, arrays)
                    result.checkpoints.append(path)
    finally:
        if fh is not None:
            fh.close()
    return result
