"""Train a small detector on synthetic scenes and compare it with guessing the centre.

This is a short run for illustration; the acceptance suite trains the full
desk-scale schedule. Run: python demos/05_train_and_evaluate.py [epochs]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from dvpnet import nn
from dvpnet.evaluator import center_baseline, coverage_row, draw_overlay, evaluate
from dvpnet.loss import LossWeights
from dvpnet.model import ModelConfig, build
from dvpnet.synthgen import SceneConfig, generate_scenes
from dvpnet.trainer import TrainConfig, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 4
out = Path(tempfile.mkdtemp(prefix="dvpnet_train_"))
nn.set_default_dtype(np.float32)

scenes = generate_scenes(SceneConfig(image_size=128, seed=0), 1100)
train_set, test_set = scenes[:1000], scenes[1000:]
# Desk recipe: a small confidence prior, and the confidence loss summed over
# cells so the one positive cell per grid is not drowned out by the negatives.
net = build(ModelConfig(input_size=128, width_multiplier=0.25, S=7, conf_prior=0.01), seed=0, dtype=np.float32)
weights = LossWeights(S=7, conf_reduction="sum")

res = train(net, train_set, TrainConfig(epochs=epochs, batch_size=16), weights, out_dir=out)
first, last = res.rows[0], res.rows[-1]
print("loss %.3f -> %.3f over %d steps" % (first["total"], last["total"], len(res.rows)))

records = evaluate(net, test_set)
print("model  ", coverage_row(records))
print("centre ", coverage_row(center_baseline(test_set)))

r, s = records[0], test_set[0]
draw_overlay(s.image, r.detection, out / "overlay.png",
             ground_truth=[(l.a, l.b) for l in s.main_lines], true_vp=s.vp)
print("checkpoints and overlay in", out)
