"""Reverse-mode gradient engine over numpy arrays.

A small tape, not a framework: Tensors wrap float64 arrays and record
their parents plus one gradient closure per parent. That is enough for
the dense shading decoders, fixed-weight splat compositing (linear in
the attributes, so geometry stays frozen), and the pixelwise image
losses. Backward walks the graph once in reverse topological order and
accumulates into ``Tensor.grad``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grads")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._grads = ()

    @staticmethod
    def from_op(data: np.ndarray, parents, grads) -> "Tensor":
        """Build a graph node. ``grads[i]`` maps the output gradient to the
        contribution for ``parents[i]``. Custom ops (sparse compositing)
        use this directly."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        parents = tuple(parents)
        out.requires_grad = any(p.requires_grad for p in parents)
        # Drop the tape for constant subgraphs so they get collected.
        out._parents = parents if out.requires_grad else ()
        out._grads = tuple(grads) if out.requires_grad else ()
        return out

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, s):
        if isinstance(s, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(s))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        src_shape = self.data.shape

        def back(g, idx=idx, shape=src_shape):
            out = np.zeros(shape)
            out[idx] += g
            return out

        return Tensor.from_op(self.data[idx], (self,), (back,))

    def reshape(self, *shape):
        src_shape = self.data.shape
        return Tensor.from_op(
            self.data.reshape(*shape), (self,), (lambda g: g.reshape(src_shape),)
        )


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.data.shape), lambda g: _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data - b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.data.shape), lambda g: _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data * b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.data.shape),
            lambda g: _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(
        a.data @ b.data,
        (a, b),
        (lambda g: g @ b.data.T, lambda g: a.data.T @ g),
    )


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    widths = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + widths)
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def make_back(i):
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return Tensor.from_op(data, tensors, tuple(make_back(i) for i in range(len(tensors))))


def tile_rows(t, n: int) -> Tensor:
    """(D,) -> (n, D), gradient sums over the repeated rows."""
    t = as_tensor(t)
    data = np.broadcast_to(t.data, (n,) + t.data.shape).copy()
    return Tensor.from_op(data, (t,), (lambda g: g.sum(axis=0),))


def relu(t) -> Tensor:
    t = as_tensor(t)
    mask = t.data > 0
    return Tensor.from_op(np.where(mask, t.data, 0.0), (t,), (lambda g: g * mask,))


def sigmoid(t) -> Tensor:
    t = as_tensor(t)
    s = expit(t.data)
    return Tensor.from_op(s, (t,), (lambda g: g * s * (1.0 - s),))


def tanh(t) -> Tensor:
    t = as_tensor(t)
    y = np.tanh(t.data)
    return Tensor.from_op(y, (t,), (lambda g: g * (1.0 - y * y),))


def absval(t) -> Tensor:
    """|x| with the subgradient at 0 fixed to 0."""
    t = as_tensor(t)
    s = np.sign(t.data)
    return Tensor.from_op(np.abs(t.data), (t,), (lambda g: g * s,))


def log(t) -> Tensor:
    t = as_tensor(t)
    return Tensor.from_op(np.log(t.data), (t,), (lambda g: g / t.data,))


def clip(t, lo: float, hi: float) -> Tensor:
    t = as_tensor(t)
    mask = (t.data > lo) & (t.data < hi)
    return Tensor.from_op(np.clip(t.data, lo, hi), (t,), (lambda g: g * mask,))


def ssum(t) -> Tensor:
    t = as_tensor(t)
    shape = t.data.shape
    return Tensor.from_op(
        np.asarray(t.data.sum()), (t,), (lambda g: np.broadcast_to(g, shape),)
    )


def mean(t) -> Tensor:
    t = as_tensor(t)
    return ssum(t) * (1.0 / t.data.size)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` for every reachable tensor
    that requires one. The loss must be a finite scalar."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss; refusing to accumulate gradients")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        g = node.grad
        if g is None:
            continue
        for parent, back in zip(node._parents, node._grads):
            if not parent.requires_grad:
                continue
            contrib = back(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
