"""Forward latency and the two ablation tables on a tiny budget.

Run: python demos/06_latency_and_ablations.py
"""
import sys

import numpy as np

from dvpnet.evaluator import AblationBudget, ablate_S, ablate_scales, bench_latency
from dvpnet.loss import LossWeights
from dvpnet.model import ModelConfig, build
from dvpnet.trainer import TrainConfig

for width in (1.0, 0.5, 0.25):
    net = build(ModelConfig(input_size=128, width_multiplier=width, S=7), dtype=np.float32)
    stats = bench_latency(net, warmup=3, reps=20)
    print("width %.2f: %8d params  median %.1f ms  (%.1f fps)"
          % (width, net.parameter_count(), stats["median_ms"], stats["fps"]))

# every row trains on the same scenes with the same schedule
base = ModelConfig(input_size=96, width_multiplier=0.25, S=7, conf_prior=0.01)
budget = AblationBudget(train_count=160, test_count=40, epochs=4, batch_size=16,
                        train_config=TrainConfig(augment=False),
                        weights=LossWeights(S=7, conf_reduction="sum"))
for row in ablate_S(base, [3, 7, 11], budget):
    print(row)
for row in ablate_scales(base, [[1], [1, 2], [1, 2, 3]], budget):
    print(row)
sys.stdout.flush()
