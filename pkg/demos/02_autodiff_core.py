"""The numpy autodiff core: ops, backward, and the checks that keep it honest.

Run: python demos/02_autodiff_core.py
"""
import numpy as np

from dvpnet import nn
from dvpnet.nn import ops
from dvpnet.nn.gradcheck import TOLERANCE, run_op_checks
from dvpnet.nn.reference import conv2d_naive

rng = np.random.default_rng(0)

# A parameter is a tensor with a name and a learning-rate group.
w = nn.Parameter(rng.normal(size=(4, 3, 3, 3)) * 0.3, "demo.weight", "backbone")
x = rng.normal(size=(2, 3, 8, 8))

y = ops.relu6(ops.conv2d(x, w, stride=2))
loss = ops.mse(y, np.zeros(y.shape), np.ones(y.shape))
nn.backward(loss)
print("output", y.shape, "loss %.5f" % float(loss.data), "grad norm %.5f" % np.linalg.norm(w.grad))

# The fast im2col convolution against six nested loops.
fast = ops.conv2d(x, w, stride=2).data
slow = conv2d_naive(x, w.data, stride=2)
print("conv vs nested loops, max |diff| = %.2e" % np.abs(fast - slow).max())

# Central finite differences over every op (64-bit).
worst = run_op_checks(range(5))
for name, err in sorted(worst.items()):
    print("  %-22s %.2e" % (name, err))
print("all within %g:" % TOLERANCE, max(worst.values()) <= TOLERANCE)

# One momentum step by hand: v = 0.9 v + g, p -= lr v.
p = nn.Parameter(np.array([1.0]), "p", "head")
p.grad = np.array([0.1])
opt = nn.SGD([p], momentum=0.9)
opt.step({"head": 0.1, "backbone": 0.01})
print("after one step p =", p.data[0])
