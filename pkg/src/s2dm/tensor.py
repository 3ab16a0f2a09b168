"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Operations are recorded only while a :class:`Tape` is active::

    with Tape() as tape:
        loss = (w * x).sum()
    grads = backward(loss, tape)

Outside a tape every op is a plain numpy computation, which is what
inference and finite-difference probing use.
"""
import threading

import numpy as np

from .errors import ContractError, NumericError

_local = threading.local()


def _stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tape:
    """Ordered record of primitive applications (inputs precede outputs)."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class no_grad:
    """Suspend recording inside an enclosing tape."""

    def __enter__(self):
        _stack().append(None)

    def __exit__(self, *exc):
        _stack().pop()
        return False


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "__weakref__")
    __array_priority__ = 1000
    __array_ufunc__ = None   # make ndarray (op) Tensor defer to Tensor's reflected ops

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def check_finite(self):
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"tensor {self.name or ''} holds NaN/Inf")
        if self.grad is not None and not np.all(np.isfinite(self.grad)):
            raise NumericError(f"gradient of {self.name or ''} holds NaN/Inf")

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op, data, inputs, backward):
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    tape = active_tape()
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._node = None
    out.requires_grad = False
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(op, inputs, out, backward)
        out._node = node
        tape.nodes.append(node)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss, tape, params=()):
    """Gradients of scalar ``loss`` w.r.t. every grad-requiring leaf on ``tape``.

    Returns ``{id(tensor): ndarray}``. Tensors in ``params`` that the loss
    does not depend on get zero gradient. Leaf ``.grad`` fields are
    overwritten with the result.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    if loss.requires_grad and loss._node is None:
        leaves[id(loss)] = loss
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if not np.all(np.isfinite(ig)):
                raise NumericError(f"non-finite gradient in backward of {node.op}")
            key = id(inp)
            prev = grads.get(key)
            grads[key] = ig if prev is None else prev + ig
            if inp._node is None:
                leaves[key] = inp
    out = {}
    for key, t in leaves.items():
        g = np.array(np.broadcast_to(grads.get(key, 0.0), t.shape), dtype=np.float64)
        t.grad = g
        out[key] = g
    for p in params:
        if id(p) not in out:
            p.grad = np.zeros_like(p.data)
            out[id(p)] = p.grad
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def neg(a):
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make("mul", a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("div", out, (a, b), bw)


def power(a, p):
    p = float(p)
    x = a.data
    return _make("pow", x ** p, (a,), lambda g: (g * p * x ** (p - 1),))


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)      # overflow surfaces as a NumericError below
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a):
    x = a.data
    if np.any(x <= 0):
        raise NumericError("log of non-positive value")
    return _make("log", np.log(x), (a,), lambda g: (g / x,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    x = a.data
    return _make("relu", np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0),))


def softplus(a):
    x = a.data
    out = np.logaddexp(0.0, x)
    # d/dx log(1 + e^x) = sigmoid(x)
    return _make("softplus", out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * x)),))


def tabs(a):
    x = a.data
    return _make("abs", np.abs(x), (a,), lambda g: (g * np.sign(x),))


def maximum(a, floor):
    """Elementwise max(a, floor) for a scalar floor (hinge, clamping)."""
    x = a.data
    return _make("maximum", np.maximum(x, floor), (a,), lambda g: (g * (x > floor),))


def stop_gradient(a):
    return Tensor(a.data)


# ---------------------------------------------------------------- reductions

def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    shape = a.shape
    return _make("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, shape, axis, keepdims),))


def mean(a, axis=None, keepdims=False):
    shape = a.shape
    n = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])
    return _make("mean", np.mean(a.data, axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, shape, axis, keepdims) / n,))


def l2_norm(a, axis=-1, keepdims=False):
    x = a.data
    n = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (g * x / safe,)

    return _make("l2_norm", n if keepdims else np.squeeze(n, axis=axis), (a,), bw)


def softmax(a, axis=-1):
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make("softmax", out, (a,), bw)


def log_softmax(a, axis=-1):
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _make("log_softmax", out, (a,), bw)


def cosine_similarity(a, b, axis=-1, eps=1e-12):
    x, y = a.data, b.data
    nx = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    ny = np.sqrt(np.sum(y * y, axis=axis, keepdims=True))
    denom = np.maximum(nx * ny, eps)
    c = np.sum(x * y, axis=axis, keepdims=True) / denom

    def bw(g):
        g = np.expand_dims(g, axis)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g * (y / denom - c * x / np.maximum(nx * nx, eps)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(g * (x / denom - c * y / np.maximum(ny * ny, eps)), b.shape)
        return ga, gb

    return _make("cosine", np.squeeze(c, axis=axis), (a, b), bw)


# ---------------------------------------------------------------- linear algebra

def _mm(x, y):
    # (..., K) @ (K, N) as one 2-D product; numpy's stacked matmul is slow here
    if y.ndim == 2 and x.ndim > 2:
        return (x.reshape(-1, x.shape[-1]) @ y).reshape(x.shape[:-1] + (y.shape[1],))
    return x @ y


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul operands must be at least 2-D; reshape vectors first")
    x, y = a.data, b.data

    def bw(g):
        ga = _unbroadcast(_mm(g, y.T if y.ndim == 2 else np.swapaxes(y, -1, -2)), a.shape) \
            if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if y.ndim == 2:
                gb = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(x, -1, -2) @ g, b.shape)
        return ga, gb

    return _make("matmul", _mm(x, y), (a, b), bw)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape):
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    inv = None if axes is None else np.argsort(axes)
    return _make("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def swapaxes(a, i, j):
    return _make("swapaxes", np.swapaxes(a.data, i, j), (a,),
                 lambda g: (np.swapaxes(g, i, j),))


def broadcast_to(a, shape):
    old = a.shape
    return _make("broadcast", np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, old),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bw)


def getitem(a, idx):
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make("slice", a.data[idx], (a,), bw)


def embedding(table, ids):
    """Row lookup ``table[ids]`` for an integer id array of any shape."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ContractError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise ContractError(f"embedding id {int(bad)} outside table of {table.shape[0]} rows")
    rows = table.shape

    def bw(g):
        full = np.zeros(rows)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, rows[-1]))
        return (full,)

    return _make("embedding", table.data[ids], (table,), bw)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)
