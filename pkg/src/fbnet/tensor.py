"""Dense NCHW tensors with reverse-mode gradients.

A Tensor wraps a contiguous numpy array (float32 by default, float64 for
gradient checks) plus an optional gradient buffer. Non-leaf tensors
remember their parents and a closure computing parent gradients; calling
``backward`` on a scalar root replays the recorded graph once, in
reverse topological order.

Everything here is deterministic: fixed reduction orders, no threading.
"""

from __future__ import annotations

import os

import numpy as np

from fbnet import kernels

DEFAULT_DTYPE = np.float32

# When true, every op asserts its output is finite (given finite inputs).
DEBUG_CHECK_FINITE = os.environ.get("FBNET_CHECK_FINITE", "") not in ("", "0")


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_op", "_spent")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not isinstance(data, np.ndarray) or arr.dtype not in (np.float32, np.float64):
            # lists/scalars get the compact default; float ndarrays keep theirs
            arr = arr.astype(DEFAULT_DTYPE)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = None
        self._grad_fn = None
        self._op = "leaf"
        self._spent = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def is_leaf(self):
        return self._parents is None

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def backward(self):
        backward(self)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def record(data, parents, grad_fn, op):
    """Wrap a forward result as a graph node.

    grad_fn(grad_out) must return one gradient array per parent (None for
    parents that need no gradient). Recording is skipped entirely when no
    parent requires a gradient.
    """
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values in output of {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._op = op
    out._spent = False
    if out.requires_grad:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    else:
        out._parents = None
        out._grad_fn = None
    return out


class Tape:
    """Topologically ordered record of the ops behind a root tensor.

    entries[i]'s parents always appear before entries[i]; backward walks
    the list exactly once in reverse.
    """

    def __init__(self, entries):
        self.entries = entries

    @classmethod
    def trace(cls, root):
        order = []
        seen = set()
        stack = [(root, iter(root._parents or ()))]
        seen.add(id(root))
        while stack:
            node, parents = stack[-1]
            nxt = next(parents, None)
            if nxt is None:
                stack.pop()
                order.append(node)
            elif id(nxt) not in seen:
                seen.add(id(nxt))
                stack.append((nxt, iter(nxt._parents or ())))
        return cls(order)

    def leaves(self):
        return [t for t in self.entries if t.is_leaf()]

    def parameters(self):
        return [t for t in self.entries if t.is_leaf() and t.requires_grad]


def backward(root):
    """Propagate d(root)/d(leaf) into every requires_grad leaf reachable from root."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.data.shape}")
    if root._spent:
        raise RuntimeError("backward already ran on this graph; rebuild it before calling again")
    tape = Tape.trace(root)
    for t in tape.entries:
        if not t.is_leaf() and t._spent:
            raise RuntimeError("graph shares ops with an already-backpropagated graph")
    root.grad = np.ones_like(root.data)
    for t in reversed(tape.entries):
        if t.is_leaf() or not t.requires_grad:
            continue
        t._spent = True
        grads = t._grad_fn(t.grad)
        for p, g in zip(t._parents, grads):
            if g is None or not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = g.astype(p.data.dtype, copy=False).reshape(p.data.shape).copy()
            else:
                p.grad += g.astype(p.data.dtype, copy=False).reshape(p.data.shape)


# -- elementwise and reduction ops ------------------------------------------


def _broadcast_check(a, b, op):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.data.shape} with {b.data.shape}") from None


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    _broadcast_check(a, b, "add")

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return record(a.data + b.data, (a, b), grad_fn, "add")


def mul(a, b):
    _broadcast_check(a, b, "mul")

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return record(a.data * b.data, (a, b), grad_fn, "mul")


def neg(a):
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def tsum(a):
    def grad_fn(g):
        return (np.full(a.data.shape, g, dtype=a.data.dtype),)

    return record(a.data.sum(), (a,), grad_fn, "sum")


def tmean(a):
    n = a.data.size

    def grad_fn(g):
        return (np.full(a.data.shape, g / n, dtype=a.data.dtype),)

    return record(a.data.sum() / n, (a,), grad_fn, "mean")


def log(a):
    def grad_fn(g):
        return (g / a.data,)

    return record(np.log(a.data), (a,), grad_fn, "log")


def sigmoid(a):
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        return (g * y * (1.0 - y),)

    return record(y, (a,), grad_fn, "sigmoid")


def relu(a):
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    return record(np.where(mask, a.data, a.data.dtype.type(0)), (a,), grad_fn, "relu")


def reshape(a, shape):
    old = a.data.shape

    def grad_fn(g):
        return (g.reshape(old),)

    return record(a.data.reshape(shape), (a,), grad_fn, "reshape")


# -- neural ops --------------------------------------------------------------


def conv2d(x, w, b=None, stride=1, padding=0, dilation=1):
    """Direct cross-correlation, NCHW input and OIHW weight."""
    if stride < 1 or dilation < 1:
        raise ValueError(f"stride and dilation must be >= 1, got {stride}, {dilation}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and weight, got {x.data.shape} and {w.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"conv2d: input channels (axis 1 = {x.data.shape[1]}) != "
            f"weight channels (axis 1 = {w.data.shape[1]})"
        )
    kh, kw = w.data.shape[2], w.data.shape[3]
    ho = kernels.out_size(x.data.shape[2], kh, stride, padding, dilation)
    wo = kernels.out_size(x.data.shape[3], kw, stride, padding, dilation)
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} (dilation {dilation}) does not fit "
            f"input {x.data.shape[2]}x{x.data.shape[3]} with padding {padding}"
        )
    y = kernels.conv2d_forward(x.data, w.data, stride, padding, dilation)
    parents = (x, w)
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise ShapeError(
                f"conv2d: bias shape {b.data.shape} != ({w.data.shape[0]},) (axis 0 of weight)"
            )
        y = y + b.data[None, :, None, None]
        parents = (x, w, b)

    def grad_fn(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_grad_input(g, w.data, x.data.shape, stride, padding, dilation)
        gw = kernels.conv2d_grad_weight(g, x.data, w.data.shape, stride, padding, dilation)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record(y, parents, grad_fn, "conv2d")


def fully_connected(x, w, b):
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(
            f"fully_connected expects 2-d input and weight, got {x.data.shape} and {w.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(
            f"fully_connected: input axis 1 = {x.data.shape[1]} != weight axis 0 = {w.data.shape[0]}"
        )
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(
            f"fully_connected: bias shape {b.data.shape} != ({w.data.shape[1]},)"
        )

    def grad_fn(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return record(x.data @ w.data + b.data, (x, w, b), grad_fn, "fully_connected")


def global_avg_pool(x):
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.data.shape}")
    h, w = x.data.shape[2], x.data.shape[3]
    y = x.data.mean(axis=(2, 3), keepdims=True)

    def grad_fn(g):
        return (np.broadcast_to(g / (h * w), x.data.shape).astype(x.data.dtype, copy=True),)

    return record(y, (x,), grad_fn, "global_avg_pool")


def upsample_nearest(x, factor):
    if not isinstance(factor, int) or factor < 1:
        raise ValueError(f"upsample factor must be an integer >= 1, got {factor!r}")
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest expects NCHW input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    y = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def grad_fn(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record(y, (x,), grad_fn, "upsample_nearest")


def _bilinear_axis(n_in, n_out, dtype):
    # half-pixel-center sampling (align_corners false); weights sum to 1
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = (src - i0).astype(dtype)
    return i0, i1, w1


def upsample_bilinear(x, factor):
    if not isinstance(factor, int) or factor < 1:
        raise ValueError(f"upsample factor must be an integer >= 1, got {factor!r}")
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_bilinear expects NCHW input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    dt = x.data.dtype
    r0, r1, rw = _bilinear_axis(h, h * factor, dt)
    c0, c1, cw = _bilinear_axis(w, w * factor, dt)
    one = dt.type(1)

    rows = x.data[:, :, r0, :] * (one - rw)[None, None, :, None] + x.data[:, :, r1, :] * rw[None, None, :, None]
    y = rows[:, :, :, c0] * (one - cw)[None, None, None, :] + rows[:, :, :, c1] * cw[None, None, None, :]

    def grad_fn(g):
        g_rows = np.zeros((n, c, h * factor, w), dtype=dt)
        np.add.at(g_rows, (slice(None), slice(None), slice(None), c0), g * (one - cw)[None, None, None, :])
        np.add.at(g_rows, (slice(None), slice(None), slice(None), c1), g * cw[None, None, None, :])
        gx = np.zeros((n, c, h, w), dtype=dt)
        np.add.at(gx, (slice(None), slice(None), r0), g_rows * (one - rw)[None, None, :, None])
        np.add.at(gx, (slice(None), slice(None), r1), g_rows * rw[None, None, :, None])
        return (gx,)

    return record(np.ascontiguousarray(y), (x,), grad_fn, "upsample_bilinear")
