"""Dense tensors with a reverse-mode tape."""
from __future__ import annotations

import contextlib
import itertools

import numpy as np

_seq = itertools.count()
_recording = True
_default_dtype = np.float64


def set_default_dtype(dtype):
    """Select float64 (default, for gradient checks) or float32 (speed)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype):
    old = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _recording
    old = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = old


def is_recording() -> bool:
    return _recording


class Tensor:
    """An array plus, when produced by a taped op, the rule to push grads back.

    ``_backward`` maps the output gradient to a tuple of parent gradients
    (``None`` for parents that do not need one).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.ascontiguousarray(data, dtype=dtype or _default_dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_seq)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    # arithmetic sugar routed through the op module
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.scale(self, other)

    __rmul__ = __mul__

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)


class Parameter(Tensor):
    __slots__ = ("name", "group")

    def __init__(self, data, name, group="backbone", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        if group not in ("backbone", "head"):
            raise ValueError(f"unknown parameter group {group!r}")
        self.name = name
        self.group = group

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, group={self.group})"


def make_node(data, parents, backward_fn) -> Tensor:
    """Wrap an op result; record it on the tape when any input needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_seq)
    needs = _recording and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Interior gradients live only for the duration of the call, so running
    backward twice over one graph (after zeroing leaves) is reproducible.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    # creation order is execution order; walk it backwards
    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in order:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
