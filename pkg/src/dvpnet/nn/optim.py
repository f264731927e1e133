from __future__ import annotations

import numpy as np


class MissingGradError(RuntimeError):
    pass


def sgd_momentum_step(params, lr_by_group, momentum, velocity):
    """One SGD step with heavy-ball momentum, in place.

    ``velocity`` maps parameter name to its buffer and is updated in place:
    ``v <- momentum * v + grad``, ``p <- p - lr(group) * v``.
    """
    for p in params:
        if p.grad is None:
            raise MissingGradError(f"parameter {p.name!r} has no gradient")
        v = velocity.get(p.name)
        if v is None:
            v = velocity[p.name] = np.zeros_like(p.data)
        v *= momentum
        v += p.grad
        p.data -= p.data.dtype.type(lr_by_group[p.group]) * v


class SGD:
    def __init__(self, params, momentum=0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = {}

    def zero_grad(self):
        # zeros rather than None: parameters the loss does not reach get grad 0
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self, lr_by_group):
        sgd_momentum_step(self.params, lr_by_group, self.momentum, self.velocity)
