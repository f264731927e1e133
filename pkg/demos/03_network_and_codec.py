"""Network shapes and the label <-> grid-cell codec.

Run: python demos/03_network_and_codec.py
"""
import numpy as np

from dvpnet import nn
from dvpnet.codec import HeadLayout, decode, encode_targets, grids_for, ideal_logits
from dvpnet.model import ModelConfig, build, param_groups
from dvpnet.synthgen import SceneConfig, generate_scenes

full = ModelConfig()
print("full model: B = %d channels, grids %s" % (full.B, full.grid_sizes))
net = build(full, dtype=np.float32)
bb, hd = param_groups(net)
print("parameters: %d backbone tensors, %d head tensors, %d values"
      % (len(bb), len(hd), net.parameter_count()))

small = ModelConfig(input_size=128, width_multiplier=0.25, S=7)
net = build(small)
with nn.no_grad():
    out = net(np.zeros((1, 3, 128, 128)))
print("desk model outputs:", [o.shape for o in out])

# Encode one scene and decode the ideal prediction back.
scene = generate_scenes(SceneConfig(image_size=128, seed=2), 1)[0]
layout = HeadLayout(small.S)
grids = grids_for(128)
targets, masks = encode_targets(scene, grids, layout)
for g, m in zip(grids, masks):
    row, col = np.argwhere(m)[0]
    print("stride %2d: positive cell (col %d, row %d)" % (g.stride, col, row))

det = decode(ideal_logits(targets, masks, layout), grids, layout)
print("true vp    (%.6f, %.6f)" % scene.vp)
print("decoded vp (%.6f, %.6f) from scale %d, confidence %.3f"
      % (det.vp.x, det.vp.y, det.scale_id, det.confidence))
print("first left-line point:", det.left.points[0])
