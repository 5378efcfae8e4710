"""Dense float64 tensors with reverse-mode autodiff on a recorded tape.

Every operation that sees at least one gradient-tracked input records a
backward closure; ``backward()`` on a scalar root replays the closures in
reverse topological order. Operations on untracked inputs produce plain
constants, so inference pays no tape overhead.

Broadcasting is deliberately narrow: same-shape elementwise, scalars, and
row-vector/leading-axis patterns that reduce cleanly with `_sum_to_shape`.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class GraphConsumedError(RuntimeError):
    """Raised when backward is invoked twice through the same graph."""


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    # -- graph traversal -------------------------------------------------

    def backward(self):
        """Populate grads of every tracked leaf reachable from this scalar root.

        The graph reachable from the root is consumed: a second backward
        through any of its interior nodes raises GraphConsumedError.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        if self._consumed:
            raise GraphConsumedError("graph already consumed by a previous backward pass")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._consumed:
                raise GraphConsumedError("graph already consumed by a previous backward pass")
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
                node._backward = None  # release closures as we go
                node._consumed = True
        self._consumed = True

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data
    out = _make(out_data, (a, b), None)
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                a._accumulate(_sum_to_shape(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(out.grad, b.shape))
        out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data - b.data, (a, b), None)
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                a._accumulate(_sum_to_shape(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(-out.grad, b.shape))
        out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, (a, b), None)
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                a._accumulate(_sum_to_shape(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(out.grad * a.data, b.shape))
        out._backward = backward
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; trailing two axes contract, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = _make(a.data @ b.data, (a, b), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_sum_to_shape(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(np.swapaxes(a.data, -1, -2) @ g, b.shape))
        out._backward = backward
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = _make(np.maximum(x.data, 0.0), (x,), None)
    if out.requires_grad:
        mask = x.data > 0.0
        def backward():
            x._accumulate(out.grad * mask)
        out._backward = backward
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = _make(y, (x,), None)
    if out.requires_grad:
        def backward():
            x._accumulate(out.grad * (1.0 - y * y))
        out._backward = backward
    return out


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    out = _make(y, (x,), None)
    if out.requires_grad:
        def backward():
            x._accumulate(out.grad * y)
        out._backward = backward
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    out = _make(np.log(x.data), (x,), None)
    if out.requires_grad:
        def backward():
            x._accumulate(out.grad / x.data)
        out._backward = backward
    return out


def logaddexp(a, b) -> Tensor:
    """Elementwise log(exp(a) + exp(b)); safe at -inf inputs."""
    a, b = as_tensor(a), as_tensor(b)
    y = np.logaddexp(a.data, b.data)
    out = _make(y, (a, b), None)
    if out.requires_grad:
        def backward():
            # exp(x - y) is the softmax weight of each branch; where both
            # branches are -inf the weight is defined as 0.
            with np.errstate(invalid="ignore"):
                wa = np.exp(a.data - y)
                wb = np.exp(b.data - y)
            wa = np.nan_to_num(wa, nan=0.0)
            wb = np.nan_to_num(wb, nan=0.0)
            if a.requires_grad:
                a._accumulate(_sum_to_shape(out.grad * wa, a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(out.grad * wb, b.shape))
        out._backward = backward
    return out


# -- reductions --------------------------------------------------------------


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.shape).copy())
        out._backward = backward
    return out


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    elif isinstance(axis, int):
        n = x.shape[axis]
    else:
        n = int(np.prod([x.shape[i] for i in axis]))
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- normalisation -----------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Rows along `axis` sum to 1; max-subtracted for stability.

    A row whose entries are all -inf has no defined distribution and is
    rejected.
    """
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    if np.isneginf(m).any():
        raise ValueError("degenerate softmax row: all entries are -inf")
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _make(y, (x,), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            dot = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate((g - dot) * y)
        out._backward = backward
    return out


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    if np.isneginf(m).any():
        raise ValueError("degenerate softmax row: all entries are -inf")
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = _make(y, (x,), None)
    if out.requires_grad:
        sm = np.exp(y)
        def backward():
            g = out.grad
            x._accumulate(g - sm * g.sum(axis=axis, keepdims=True))
        out._backward = backward
    return out


def layer_norm(x, gain, bias, eps: float) -> Tensor:
    """Normalise the last axis to mean 0 / population variance 1, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _make(xhat * gain.data + bias.data, (x, gain, bias), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            if gain.requires_grad:
                gain._accumulate(_sum_to_shape(g * xhat, gain.shape))
            if bias.requires_grad:
                bias._accumulate(_sum_to_shape(g, bias.shape))
            if x.requires_grad:
                gx = g * gain.data
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                x._accumulate((gx - m1 - xhat * m2) * inv)
        out._backward = backward
    return out


# -- shape and indexing ------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = _make(x.data.reshape(shape), (x,), None)
    if out.requires_grad:
        def backward():
            x._accumulate(out.grad.reshape(x.shape))
        out._backward = backward
    return out


def swap_axes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    out = _make(np.swapaxes(x.data, a1, a2), (x,), None)
    if out.requires_grad:
        def backward():
            x._accumulate(np.swapaxes(out.grad, a1, a2))
        out._backward = backward
    return out


def transpose_last(x) -> Tensor:
    """Transpose the trailing two axes."""
    return swap_axes(x, -1, -2)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * out.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(out.grad[tuple(idx)])
        out._backward = backward
    return out


def getitem(x, key) -> Tensor:
    """Basic slicing (ints, slices with steps, tuples thereof)."""
    x = as_tensor(x)
    out = _make(x.data[key], (x,), None)
    if out.requires_grad:
        def backward():
            g = np.zeros_like(x.data)
            g[key] += out.grad
            x._accumulate(g)
        out._backward = backward
    return out


def index_select(x, indices, axis: int = 0) -> Tensor:
    """Gather along one axis with an integer index array."""
    x = as_tensor(x)
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise IndexError(f"index out of range for axis {axis} of shape {x.shape}")
    out = _make(np.take(x.data, idx, axis=axis), (x,), None)
    if out.requires_grad:
        def backward():
            g = np.zeros_like(x.data)
            moved = np.moveaxis(out.grad, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
            gm = np.moveaxis(g, axis, 0)
            np.add.at(gm, idx.reshape(-1), moved.reshape((-1,) + gm.shape[1:]))
            x._accumulate(g)
        out._backward = backward
    return out


def embedding(table, ids) -> Tensor:
    """Integer ids (any shape) mapped to rows of a 2-d parameter matrix."""
    return index_select(table, ids, axis=0)


def masked_fill(x, mask, value: float) -> Tensor:
    """Set entries where `mask` is true to `value`; no grad flows there."""
    x = as_tensor(x)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = _make(np.where(m, value, x.data), (x,), None)
    if out.requires_grad:
        def backward():
            x._accumulate(np.where(m, 0.0, out.grad))
        out._backward = backward
    return out
