"""Dense float64 tensors with a recorded-operation (tape) reverse mode.

Every primitive is a :class:`Function` with a hand-derived ``backward``.
Calling ``Tensor.backward`` walks the recorded graph in reverse topological
order and accumulates gradients additively into ``Tensor.grad`` of every
leaf that requires gradients.

Broadcasting is deliberately narrow: binary operands must have equal rank
and each extent must either match or be 1.  There is no rank promotion.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import DimensionError, StateError

DTYPE = np.float64

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_fn", "_parents", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._fn = None
        self._parents = ()
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor.

        ``grad`` defaults to ones (so a scalar loss needs no argument).
        """
        if not self.requires_grad:
            raise StateError("backward() on a tensor that does not require gradients")
        if self._fn is None and not self._parents:
            # a leaf: its gradient is just the seed
            seed = np.ones_like(self.data) if grad is None else np.asarray(grad, DTYPE)
            self.grad = self.grad + seed
            return
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, DTYPE)
        if seed.shape != self.shape:
            raise DimensionError(f"seed gradient shape {seed.shape} != tensor shape {self.shape}")

        order = _topological_order(self)
        pending = {id(self): seed}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._fn is None:
                node.grad = node.grad + g
                continue
            input_grads = node._fn.backward(g)
            for parent, pg in zip(node._parents, input_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(*shape, requires_grad=False):
    return Tensor(np.zeros(shape, DTYPE), requires_grad=requires_grad)


class Function:
    """One recorded primitive.  ``forward`` stores what ``backward`` needs."""

    def __init__(self):
        self._ran_forward = False

    def forward(self, *args):
        raise NotImplementedError

    def _backward(self, grad):
        raise NotImplementedError

    def backward(self, grad):
        if not self._ran_forward:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._backward(np.asarray(grad, DTYPE))

    @classmethod
    def apply(cls, inputs, *args, **kwargs):
        fn = cls()
        out = fn.forward(*[t.data for t in inputs], *args, **kwargs)
        fn._ran_forward = True
        needs = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
        result = Tensor(out)
        if needs:
            result.requires_grad = True
            result._fn = fn
            result._parents = tuple(inputs)
        return result


def broadcast_shape(a, b):
    if len(a) != len(b):
        raise DimensionError(f"rank mismatch: {tuple(a)} vs {tuple(b)} (no implicit rank promotion)")
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise DimensionError(f"shapes {tuple(a)} and {tuple(b)} are not broadcastable")
    return tuple(out)


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


# ---------------------------------------------------------------- elementwise

class Add(Function):
    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        self.shapes = (a.shape, b.shape)
        return a + b

    def _backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        self.shapes = (a.shape, b.shape)
        return a - b

    def _backward(self, g):
        return _unbroadcast(g, self.shapes[0]), -_unbroadcast(g, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        self.a, self.b = a, b
        return a * b

    def _backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Scale(Function):
    def forward(self, a, c):
        self.c = float(c)
        return a * self.c

    def _backward(self, g):
        return (g * self.c,)


class Relu(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def _backward(self, g):
        return (g * self.mask,)


class Sigmoid(Function):
    def forward(self, a):
        self.y = 0.5 * (1.0 + np.tanh(0.5 * a))
        return self.y

    def _backward(self, g):
        return (g * self.y * (1.0 - self.y),)


class Tanh(Function):
    def forward(self, a):
        self.y = np.tanh(a)
        return self.y

    def _backward(self, g):
        return (g * (1.0 - self.y * self.y),)


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def _backward(self, g):
        return (g * self.sign,)


class Huber(Function):
    def forward(self, a, delta):
        self.a, self.delta = a, float(delta)
        small = np.abs(a) <= self.delta
        return np.where(small, 0.5 * a * a, self.delta * (np.abs(a) - 0.5 * self.delta))

    def _backward(self, g):
        return (g * np.clip(self.a, -self.delta, self.delta),)


def add(a, b):
    return Add.apply((a, b))


def sub(a, b):
    return Sub.apply((a, b))


def mul(a, b):
    return Mul.apply((a, b))


def scale(a, c):
    return Scale.apply((a,), c)


def relu(a):
    return Relu.apply((a,))


def sigmoid(a):
    return Sigmoid.apply((a,))


def tanh(a):
    return Tanh.apply((a,))


def abs_(a):
    return Abs.apply((a,))


def huber(a, delta=1.0):
    return Huber.apply((a,), delta)


_UNARY = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "mul": mul, "sub": sub}


def elementwise(op, a, b=None):
    """Dispatch by name: add, mul, sub (binary) or relu, sigmoid, tanh (unary)."""
    if op in _BINARY:
        if b is None:
            raise DimensionError(f"'{op}' needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------- linear algebra

class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
            raise DimensionError(f"matmul needs equal-rank operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
        broadcast_shape(a.shape[:-2], b.shape[:-2])
        self.a, self.b = a, b
        return a @ b

    def _backward(self, g):
        ga = g @ np.swapaxes(self.b, -1, -2)
        gb = np.swapaxes(self.a, -1, -2) @ g
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Linear(Function):
    """x[..., p] @ w[p, q] (+ b[q]): a weight applied along the last axis."""

    def forward(self, x, w, b=None):
        if w.ndim != 2 or x.shape[-1] != w.shape[0]:
            raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
        if b is not None and b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
        self.x, self.w, self.has_b = x, w, b is not None
        y = x @ w
        return y + b if b is not None else y

    def _backward(self, g):
        x2 = self.x.reshape(-1, self.x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ self.w.T
        gw = x2.T @ g2
        if self.has_b:
            return gx, gw, g2.sum(axis=0)
        return gx, gw


class ChannelProject(Function):
    """1x1 convolution: x[..., C_in, N, m], w[C_out, C_in], b[C_out]."""

    def forward(self, x, w, b):
        if x.ndim < 3 or w.ndim != 2 or x.shape[-3] != w.shape[1] or b.shape != (w.shape[0],):
            raise DimensionError(
                f"channel_project: input {x.shape}, weight {w.shape}, bias {b.shape} are inconsistent")
        self.x, self.w = x, w
        lead = x.shape[:-3]
        x3 = x.reshape((-1, x.shape[-3], x.shape[-2] * x.shape[-1]))
        y = np.matmul(w, x3) + b[:, None]
        return y.reshape(lead + (w.shape[0],) + x.shape[-2:])

    def _backward(self, g):
        C, O = self.w.shape[1], self.w.shape[0]
        g3 = g.reshape((-1, O, g.shape[-2] * g.shape[-1]))
        x3 = self.x.reshape((-1, C, g3.shape[-1]))
        gx = np.matmul(self.w.T, g3).reshape(self.x.shape)
        gw = g3.transpose(1, 0, 2).reshape(O, -1) @ x3.transpose(1, 0, 2).reshape(C, -1).T
        gb = g3.sum(axis=(0, 2))
        return gx, gw, gb


def matmul(a, b):
    return MatMul.apply((a, b))


def linear(x, w, b=None):
    if b is None:
        return Linear.apply((x, w))
    return Linear.apply((x, w, b))


def channel_project(x, w, b):
    return ChannelProject.apply((x, w, b))


# -------------------------------------------------------------- reductions

class Softmax(Function):
    def forward(self, a):
        if a.ndim == 0 or a.shape[-1] < 1:
            raise DimensionError("softmax needs a last axis of extent >= 1")
        z = np.exp(a - a.max(axis=-1, keepdims=True))
        self.y = z / z.sum(axis=-1, keepdims=True)
        return self.y

    def _backward(self, g):
        y = self.y
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def _backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.shape).copy(),)


class LayerNorm(Function):
    def forward(self, x, gain, bias, eps=1e-5):
        d = x.shape[-1]
        if gain.shape != (d,) or bias.shape != (d,):
            raise DimensionError(f"layer_norm: gain/bias must have shape ({d},)")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv
        self.gain = gain
        return self.xhat * gain + bias

    def _backward(self, g):
        xhat, inv = self.xhat, self.inv
        g2 = g.reshape(-1, g.shape[-1])
        ggain = (g2 * xhat.reshape(g2.shape)).sum(axis=0)
        gbias = g2.sum(axis=0)
        gx_hat = g * self.gain
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias


def softmax(a):
    """Softmax over the last axis, max-subtracted."""
    return Softmax.apply((a,))


softmax_last_axis = softmax


def sum_(a, axis=None, keepdims=False):
    return Sum.apply((a,), axis, keepdims)


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def layer_norm(x, gain, bias, eps=1e-5):
    return LayerNorm.apply((x, gain, bias), eps)


# ----------------------------------------------------------- restructuring

class Reshape(Function):
    def forward(self, a, shape):
        shape = tuple(int(s) for s in shape)
        if math.prod(shape) != a.size:
            raise DimensionError(f"cannot reshape {a.shape} ({a.size} elements) to {shape}")
        self.shape = a.shape
        return a.reshape(shape)

    def _backward(self, g):
        return (g.reshape(self.shape),)


class Permute(Function):
    def forward(self, a, axes):
        axes = tuple(int(x) for x in axes)
        if sorted(axes) != list(range(a.ndim)):
            raise DimensionError(f"{axes} is not a permutation of the {a.ndim} axes of {a.shape}")
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(np.transpose(a, axes))

    def _backward(self, g):
        return (np.transpose(g, self.inverse),)


class Expand(Function):
    def forward(self, a, shape):
        shape = tuple(shape)
        if broadcast_shape(a.shape, shape) != shape:
            raise DimensionError(f"cannot expand {a.shape} to {shape}")
        self.shape = a.shape
        return np.broadcast_to(a, shape).copy()

    def _backward(self, g):
        return (_unbroadcast(g, self.shape),)


class Concat(Function):
    def forward(self, *arrays, axis=-1):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as exc:
            raise DimensionError(f"concat: {exc}") from None

    def _backward(self, g):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(g, cuts, axis=self.axis))


class SliceLast(Function):
    def forward(self, a, start, stop):
        self.shape, self.start, self.stop = a.shape, start, stop
        return a[..., start:stop].copy()

    def _backward(self, g):
        out = np.zeros(self.shape, DTYPE)
        out[..., self.start:self.stop] = g
        return (out,)


class TakeRows(Function):
    """Embedding lookup: table[R, D] indexed by an integer array."""

    def forward(self, table, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise DimensionError(f"row index out of range for table with {table.shape[0]} rows")
        self.shape, self.idx = table.shape, idx
        return table[idx]

    def _backward(self, g):
        out = np.zeros(self.shape, DTYPE)
        np.add.at(out, self.idx.reshape(-1), g.reshape(-1, self.shape[1]))
        return (out,)


def reshape(a, shape):
    return Reshape.apply((a,), shape)


def permute(a, axes):
    return Permute.apply((a,), axes)


def expand(a, shape):
    return Expand.apply((a,), shape)


def concat(tensors, axis=-1):
    return Concat.apply(tuple(tensors), axis=axis)


def slice_last(a, start, stop):
    return SliceLast.apply((a,), start, stop)


def take_rows(table, idx):
    return TakeRows.apply((table,), idx)


def rearrange(x, shape=None, axes=None):
    """Reshape (``shape=``) or permute (``axes=``) a tensor.

    Returns ``(result, inverse)`` where ``inverse`` is a dict that, passed
    back as keyword arguments, restores the original element order.
    """
    if (shape is None) == (axes is None):
        raise ValueError("give exactly one of shape= or axes=")
    if shape is not None:
        return reshape(x, shape), {"shape": x.shape}
    inv = tuple(int(i) for i in np.argsort(axes))
    return permute(x, axes), {"axes": inv}


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, axes)


# --------------------------------------------------------------- recurrence

class LSTMScan(Function):
    """Single-layer LSTM over axis 1 of x[B, S, D_in], zero initial state.

    Gate blocks along the 4H axis are ordered i, f, g, o.
    """

    def forward(self, x, w_ih, w_hh, b):
        B, S, _ = x.shape
        H = w_hh.shape[0]
        if w_ih.shape != (x.shape[2], 4 * H) or w_hh.shape != (H, 4 * H) or b.shape != (4 * H,):
            raise DimensionError(
                f"lstm: x {x.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, b {b.shape} inconsistent")
        pre = x @ w_ih + b
        hs = np.zeros((B, S + 1, H), DTYPE)
        cs = np.zeros((B, S + 1, H), DTYPE)
        gates = np.empty((B, S, 4 * H), DTYPE)
        for t in range(S):
            z = pre[:, t] + hs[:, t] @ w_hh
            ifo = 0.5 * (1.0 + np.tanh(0.5 * z[:, np.r_[0:2 * H, 3 * H:4 * H]]))
            i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:]
            gg = np.tanh(z[:, 2 * H:3 * H])
            c = f * cs[:, t] + i * gg
            cs[:, t + 1] = c
            hs[:, t + 1] = o * np.tanh(c)
            gates[:, t, :H], gates[:, t, H:2 * H] = i, f
            gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:] = gg, o
        self.x, self.w_ih, self.w_hh = x, w_ih, w_hh
        self.hs, self.cs, self.gates = hs, cs, gates
        return hs[:, 1:].copy()

    def _backward(self, g):
        B, S, _ = self.x.shape
        H = self.w_hh.shape[0]
        w_hh_t = self.w_hh.T
        dpre = np.empty((B, S, 4 * H), DTYPE)
        dh_next = np.zeros((B, H), DTYPE)
        dc_next = np.zeros((B, H), DTYPE)
        for t in range(S - 1, -1, -1):
            i = self.gates[:, t, :H]
            f = self.gates[:, t, H:2 * H]
            gg = self.gates[:, t, 2 * H:3 * H]
            o = self.gates[:, t, 3 * H:]
            c = self.cs[:, t + 1]
            tc = np.tanh(c)
            dh = g[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dpre[:, t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H:2 * H] = dc * self.cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ w_hh_t
        dpre2 = dpre.reshape(-1, 4 * H)
        gx = dpre @ self.w_ih.T
        gw_ih = self.x.reshape(-1, self.x.shape[2]).T @ dpre2
        gw_hh = self.hs[:, :-1].reshape(-1, H).T @ dpre2
        gb = dpre2.sum(axis=0)
        return gx, gw_ih, gw_hh, gb


def lstm_scan(x, w_ih, w_hh, b):
    return LSTMScan.apply((x, w_ih, w_hh, b))
