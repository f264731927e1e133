"""Consistency-error evaluation, coverage curves, latency and ablation runs."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from . import nn
from .codec import Detection, HeadLayout, decode_batch, grids_for
from .geometry import Point2, consistency_error, discretize
from .loss import LossWeights
from .model import ModelConfig, build
from .synthgen import SceneConfig, generate_scenes
from .trainer import TrainConfig, images_to_batch, train

log = logging.getLogger(__name__)

EDGE_SAMPLES = 64
REPORT_THRESHOLDS = (1.0, 2.0, 3.0, 5.0)


@dataclass
class EvalRecord:
    scene_id: str
    detection: Optional[Detection]
    vp: Point2
    ce: float
    ground_truth_edges: list
    true_vp: Optional[Point2] = None


@dataclass
class CoverageCurve:
    thresholds: np.ndarray
    coverage: np.ndarray

    def at(self, t) -> float:
        i = int(np.searchsorted(self.thresholds, t))
        if i == len(self.thresholds) or self.thresholds[i] != t:
            raise KeyError(f"threshold {t} not on the curve")
        return float(self.coverage[i])


def ground_truth_edges(scene, samples=EDGE_SAMPLES):
    return [discretize(line, samples).points for line in scene.main_lines]


def score(scene, vp, detection=None) -> EvalRecord:
    edges = ground_truth_edges(scene)
    ce = consistency_error(edges, vp, scene.image_size)
    return EvalRecord(scene.scene_id, detection, Point2(*vp), ce, edges, scene.vp)


def evaluate(net, test_set, scales=None, batch_size=32) -> list:
    """Decode every scene and score it against its labeled lines."""
    layout = HeadLayout(net.config.S)
    grids = grids_for(net.config.input_size)
    was_training = net.training
    net.eval()
    records = []
    try:
        with nn.no_grad():
            for b0 in range(0, len(test_set), batch_size):
                scenes = test_set[b0:b0 + batch_size]
                for s in scenes:
                    if s.image_size != (net.config.input_size,) * 2:
                        raise ValueError(f"scene {s.scene_id!r} is {s.image_size}, model expects "
                                         f"{net.config.input_size}")
                preds = net(images_to_batch(scenes, net.dtype))
                for s, det in zip(scenes, decode_batch(preds, grids, layout, None, scales)):
                    records.append(score(s, det.vp, det))
    finally:
        net.train(was_training)
    return records


def center_baseline(test_set) -> list:
    """Score the fixed guess "vp = image centre" on every scene."""
    return [score(s, (s.image_size[0] / 2, s.image_size[1] / 2)) for s in test_set]


def coverage_curve(records, thresholds) -> CoverageCurve:
    ces = np.array([r.ce if isinstance(r, EvalRecord) else float(r) for r in records])
    if ces.size == 0:
        raise ValueError("no records to summarise")
    t = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be ascending")
    ces.sort()
    cov = np.searchsorted(ces, t, side="right") / ces.size
    return CoverageCurve(t, cov)


def default_curve_grid():
    return np.round(np.arange(1, 41) * 0.25, 2)


def coverage_row(records, thresholds=REPORT_THRESHOLDS) -> dict:
    curve = coverage_curve(records, thresholds)
    return {f"ce<={t:g}": float(c) for t, c in zip(curve.thresholds, curve.coverage)}


def bench_latency(net, input_size=None, warmup=20, reps=200, seed=0) -> dict:
    """Time single-image forward passes (inference mode, no tape)."""
    if warmup < 1 or reps < 10:
        raise ValueError("need warmup >= 1 and reps >= 10")
    size = input_size or net.config.input_size
    x = np.random.default_rng(seed).random((1, 3, size, size)).astype(net.dtype)
    was_training = net.training
    net.eval()
    times = []
    try:
        with nn.no_grad():
            for _ in range(warmup):
                net(x)
            for _ in range(reps):
                t0 = time.perf_counter()
                net(x)
                times.append((time.perf_counter() - t0) * 1000.0)
    finally:
        net.train(was_training)
    t = np.array(times)
    median = float(np.median(t))
    return {"median_ms": median, "p5_ms": float(np.percentile(t, 5)),
            "p95_ms": float(np.percentile(t, 95)), "fps": 1000.0 / median, "reps": reps}


# ------------------------------------------------------------------ tables

def write_table(rows, path, columns=None):
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def records_table(records):
    return [{"scene_id": r.scene_id, "vp_x": r.vp.x, "vp_y": r.vp.y,
             "confidence": "" if r.detection is None else r.detection.confidence,
             "true_vp_x": "" if r.true_vp is None else r.true_vp.x,
             "true_vp_y": "" if r.true_vp is None else r.true_vp.y, "ce": r.ce}
            for r in records]


def curve_table(curve: CoverageCurve):
    return [{"threshold": float(t), "coverage": float(c)} for t, c in zip(curve.thresholds, curve.coverage)]


# ------------------------------------------------------------------ overlay

def draw_overlay(image, detection: Optional[Detection], path, ground_truth=None, true_vp=None):
    """Copy of ``image`` with the detected vp (cross), line proposals and labels."""
    arr = np.round(np.clip(np.asarray(image), 0, 1) * 255).astype(np.uint8)
    im = Image.fromarray(arr).convert("RGB")
    scale = max(1, 384 // max(im.size))
    im = im.resize((im.size[0] * scale, im.size[1] * scale), Image.NEAREST)
    d = ImageDraw.Draw(im)

    def sc(p):
        return (float(p[0]) * scale, float(p[1]) * scale)

    for seg in ground_truth or []:
        d.line([sc(seg[0]), sc(seg[1])], fill=(0, 200, 0), width=2)
    if true_vp is not None:
        x, y = sc(true_vp)
        d.ellipse([x - 4, y - 4, x + 4, y + 4], outline=(0, 200, 0), width=2)
    if detection is not None:
        for line in (detection.left, detection.right):
            pts = [sc(p) for p in line.points]
            d.line(pts, fill=(230, 30, 30), width=1)
            for x, y in pts:
                d.ellipse([x - 1.5, y - 1.5, x + 1.5, y + 1.5], fill=(230, 30, 30))
        x, y = sc(detection.vp)
        d.line([x - 7, y, x + 7, y], fill=(30, 60, 255), width=2)
        d.line([x, y - 7, x, y + 7], fill=(30, 60, 255), width=2)
    im.save(path)


# ---------------------------------------------------------------- ablations

@dataclass
class AblationBudget:
    """Identical data and schedule used for every row of an ablation table."""

    train_count: int = 200
    test_count: int = 50
    epochs: int = 5
    batch_size: int = 16
    seed: int = 0
    thresholds: tuple = (1.0, 2.0, 3.0)
    train_config: Optional[TrainConfig] = None
    scene_config: Optional[SceneConfig] = None
    weights: Optional[LossWeights] = None
    dtype: object = np.float32

    def data(self, input_size):
        sc = self.scene_config or SceneConfig(image_size=input_size, seed=self.seed)
        sc = replace(sc, image_size=input_size)
        scenes = generate_scenes(sc, self.train_count + self.test_count)
        return scenes[:self.train_count], scenes[self.train_count:]

    def trainer(self):
        tc = self.train_config or TrainConfig()
        return replace(tc, epochs=self.epochs, batch_size=self.batch_size, seed=self.seed)


def _run_row(model_config, budget, train_set, test_set, weights, scales):
    with nn.default_dtype(budget.dtype):
        net = build(model_config, seed=budget.seed, dtype=budget.dtype)
        train(net, train_set, budget.trainer(), weights, scales=scales)
        records = evaluate(net, test_set, scales=scales)
    return coverage_row(records, budget.thresholds), records


def ablate_S(base: ModelConfig, S_values, budget: AblationBudget) -> list:
    """One row per slice count: coverage at each budget threshold."""
    train_set, test_set = budget.data(base.input_size)
    rows = []
    for S in S_values:
        row = {"S": S, "lambda_l": 2.5 / S}
        try:
            cfg = replace(base, S=S)
            w = replace(budget.weights, S=S) if budget.weights else LossWeights(S=S)
            cov, _ = _run_row(cfg, budget, train_set, test_set, w, None)
            row.update(cov, status="ok")
        except Exception as e:  # a failed row must not sink the table
            log.exception("S=%s failed", S)
            row.update({f"ce<={t:g}": "" for t in budget.thresholds}, status=f"error: {e}")
        rows.append(row)
    return rows


def scale_label(subset) -> str:
    return "Scale-" + ",".join(str(s) for s in sorted(subset))


def ablate_scales(base: ModelConfig, subsets, budget: AblationBudget) -> list:
    """One row per scale subset (1 = stride-32 grid); loss and decode are masked."""
    train_set, test_set = budget.data(base.input_size)
    rows = []
    for subset in subsets:
        subset = sorted(set(subset))
        row = {"scales": scale_label(subset)}
        try:
            if not subset or not set(subset) <= {1, 2, 3}:
                raise ValueError(f"scale subset {subset} not drawn from {{1, 2, 3}}")
            w = budget.weights or LossWeights(S=base.S)
            cov, _ = _run_row(base, budget, train_set, test_set, w, [s - 1 for s in subset])
            row.update(cov, status="ok")
        except Exception as e:
            log.exception("scales %s failed", subset)
            row.update({f"ce<={t:g}": "" for t in budget.thresholds}, status=f"error: {e}")
        rows.append(row)
    return rows
