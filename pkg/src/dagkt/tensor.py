"""Dense reverse-mode automatic differentiation on top of numpy.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them.  The graph is rebuilt on
every forward pass (define-by-run); :func:`backward` linearises it into a tape
in topological order and walks it in reverse.

All values are float64.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

DTYPE = np.float64
BCE_EPS = 1e-7


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _op="leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        self._parents = _parents
        self._backward = None
        self.op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, op, backward):
    parents = tuple(parents)
    out = Tensor(data, _parents=parents, _op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), "mul", backward)


def square(x):
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, 2.0 * x.data * g)

    return _result(x.data * x.data, (x,), "square", backward)


def log(x):
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, g / x.data)

    return _result(np.log(x.data), (x,), "log", backward)


# ----------------------------------------------------------------------------
# nonlinearities

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        _accumulate(x, g * mask)

    return _result(np.where(mask, x.data, 0.0), (x,), "relu", backward)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - y * y))

    return _result(y, (x,), "tanh", backward)


def sigmoid(x):
    x = as_tensor(x)
    y = expit(x.data)

    def backward(g):
        _accumulate(x, g * y * (1.0 - y))

    return _result(y, (x,), "sigmoid", backward)


def softmax(x, mask=None):
    """Softmax over the last axis.

    ``mask`` is a boolean array broadcastable to ``x``; masked-out entries get
    probability exactly zero.  Every row needs at least one unmasked entry.
    """
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accumulate(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _result(y, (x,), "softmax", backward)


# ----------------------------------------------------------------------------
# linear algebra and shape manipulation

def matmul(a, b):
    """Matrix product over the last two axes with numpy broadcasting of the
    leading axes.  A 1-D ``a`` is treated as a row vector against a 2-D ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (a.ndim == 1 and b.ndim != 2):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if a.ndim == 1:
                _accumulate(b, np.outer(a.data, g))
            elif b.ndim == 2:
                _accumulate(b, a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(data, (a, b), "matmul", backward)


def transpose(x):
    """Swap the last two axes."""
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(x.data, -1, -2), (x,), "transpose", backward)


def _expand_ellipsis(subscripts, a, b):
    inputs, out = subscripts.replace(" ", "").split("->")
    sa, sb = inputs.split(",")
    if "..." not in subscripts:
        return sa, sb, out
    used = set(sa + sb + out) - {"."}
    spare = [c for c in "ABCDEFGHIJKLMNOPQRSTUVWXYZ" if c not in used]
    n = max(x.ndim - (len(s) - 3) for x, s in ((a, sa), (b, sb)) if "..." in s)
    fill = "".join(spare[:n])

    def sub(s, x=None):
        if "..." not in s:
            return s
        k = n if x is None else x.ndim - (len(s) - 3)
        return s.replace("...", fill[n - k:])

    return sub(sa, a), sub(sb, b), sub(out)


def einsum(subscripts, a, b):
    """Two-operand einsum with explicit output, e.g. ``"btsh,bteh->btse"``.

    Every index of one operand must appear in the other operand or the output.
    """
    a, b = as_tensor(a), as_tensor(b)
    sa, sb, out = _expand_ellipsis(subscripts, a, b)
    try:
        data = np.einsum(f"{sa},{sb}->{out}", a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"einsum {subscripts}: shapes {a.shape} and {b.shape}: {exc}") from None

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.einsum(f"{out},{sb}->{sa}", g, b.data), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.einsum(f"{out},{sa}->{sb}", g, a.data), b.shape))

    return _result(data, (a, b), "einsum", backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        lead = (slice(None),) * ax
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                _accumulate(t, g[lead + (slice(lo, hi),)])

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, "concat", backward)


def reshape(x, shape):
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), "reshape", backward)


def take(x, index):
    """Basic or fancy indexing; the gradient scatters back with ``np.add.at``."""
    x = as_tensor(x)

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        if not x.requires_grad:
            return
        full = np.zeros_like(x.data) if x.grad is None else x.grad
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        x.grad = full

    return _result(x.data[index], (x,), "take", backward)


def embedding_lookup(table, ids):
    """Rows of ``table`` selected by an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: id out of range for table with {table.shape[0]} rows")

    def backward(g):
        if not table.requires_grad:
            return
        full = np.zeros_like(table.data) if table.grad is None else table.grad
        np.add.at(full, ids, g)
        table.grad = full

    return _result(table.data[ids], (table,), "embedding_lookup", backward)


def lstm_layer(xproj, Wh, h0=None, c0=None):
    """A whole LSTM layer over time as one operation.

    ``xproj`` (B, T, 4n) holds the input projections ``x_t @ Wx + b`` with
    gates ordered input, forget, candidate, output; ``Wh`` (n, 4n) is the
    recurrent matrix.  Returns the hidden states (B, T, n).  The initial state
    (``h0``, ``c0``: plain arrays, default zero) is not differentiated.
    Backward runs backpropagation through time in numpy.
    """
    xproj, Wh = as_tensor(xproj), as_tensor(Wh)
    if xproj.ndim != 3 or Wh.ndim != 2 or Wh.shape[1] != 4 * Wh.shape[0] or xproj.shape[-1] != Wh.shape[1]:
        raise ShapeError(f"lstm_layer: incompatible shapes {xproj.shape} and {Wh.shape}")
    B, Tn, _ = xproj.shape
    n = Wh.shape[0]
    h = np.zeros((B, n)) if h0 is None else np.asarray(h0, dtype=DTYPE)
    c = np.zeros((B, n)) if c0 is None else np.asarray(c0, dtype=DTYPE)
    W = Wh.data
    hs = np.empty((B, Tn, n))
    h_prev = np.empty((B, Tn, n))
    c_prev = np.empty((B, Tn, n))
    gates = np.empty((B, Tn, 4 * n))
    tanh_c = np.empty((B, Tn, n))
    for t in range(Tn):
        z = xproj.data[:, t] + h @ W
        act = np.empty_like(z)
        act[:, :2 * n] = expit(z[:, :2 * n])
        act[:, 2 * n:3 * n] = np.tanh(z[:, 2 * n:3 * n])
        act[:, 3 * n:] = expit(z[:, 3 * n:])
        i, f, g, o = act[:, :n], act[:, n:2 * n], act[:, 2 * n:3 * n], act[:, 3 * n:]
        h_prev[:, t], c_prev[:, t] = h, c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[:, t], tanh_c[:, t], hs[:, t] = act, tc, h

    def backward(gh):
        dz = np.empty_like(gates)
        dh_next = np.zeros((B, n))
        dc_next = np.zeros((B, n))
        for t in range(Tn - 1, -1, -1):
            act = gates[:, t]
            i, f, g, o = act[:, :n], act[:, n:2 * n], act[:, 2 * n:3 * n], act[:, 3 * n:]
            tc = tanh_c[:, t]
            dh = gh[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            d = dz[:, t]
            d[:, :n] = dc * g * i * (1.0 - i)
            d[:, n:2 * n] = dc * c_prev[:, t] * f * (1.0 - f)
            d[:, 2 * n:3 * n] = dc * i * (1.0 - g * g)
            d[:, 3 * n:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = d @ W.T
        _accumulate(xproj, dz)
        if Wh.requires_grad:
            _accumulate(Wh, h_prev.reshape(-1, n).T @ dz.reshape(-1, 4 * n))

    return _result(hs, (xproj, Wh), "lstm_layer", backward)


# ----------------------------------------------------------------------------
# reductions and losses

def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(x.data.sum(axis=axis), (x,), "sum", backward)


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape) / n)

    return _result(x.data.mean(axis=axis), (x,), "mean", backward)


def binary_cross_entropy(p, y):
    """Elementwise ``-(y log p + (1-y) log(1-p))``.

    Each log argument is clamped below at 1e-7, so a prediction equal to its
    label costs exactly zero and a confidently wrong one costs ``-log(1e-7)``.
    """
    p = as_tensor(p)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=DTYPE)
    if p.shape != y.shape:
        raise ShapeError(f"binary_cross_entropy: incompatible shapes {p.shape} and {y.shape}")
    pos = np.maximum(p.data, BCE_EPS)
    neg = np.maximum(1.0 - p.data, BCE_EPS)
    with np.errstate(invalid="ignore"):
        out = -(np.where(y > 0, y * np.log(pos), 0.0) + np.where(y < 1, (1.0 - y) * np.log(neg), 0.0))

    def backward(g):
        dpos = np.where(p.data > BCE_EPS, -y / pos, 0.0)
        dneg = np.where(1.0 - p.data > BCE_EPS, (1.0 - y) / neg, 0.0)
        _accumulate(p, g * (dpos + dneg))

    return _result(out, (p,), "binary_cross_entropy", backward)


def dropout(x, keep_prob=0.8, training=True, rng=None):
    """Inverted dropout: kept units are scaled by ``1 / keep_prob``.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    x = as_tensor(x)
    if not training or keep_prob == 1.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) < keep_prob) / keep_prob

    def backward(g):
        _accumulate(x, g * mask)

    return _result(x.data * mask, (x,), "dropout", backward)


# ----------------------------------------------------------------------------
# backward pass

def build_tape(root):
    """Nodes reachable from ``root`` in topological order (inputs first)."""
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss):
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = build_tape(loss)
    # interior nodes start from zero; leaf grads accumulate across calls
    for node in tape:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in tape:
        if node.requires_grad and node.grad is None:
            node.grad = np.zeros_like(node.data)
