"""Dense tensors with a dynamic reverse-mode tape.

Gradients are only tracked inside an active :class:`Tape`::

    with Tape() as tape:
        loss = cross_entropy(matmul(x, w), labels)
    tape.backward(loss)

Outside a tape every op is a plain numpy computation. A tape opened with
``grad=False`` records op metadata only; it is how the benchmark counts
multiply-adds and peak live activation floats.
"""

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, InputError, NonFiniteError, TrainingError

_local = threading.local()
_tape_serial = itertools.count()


def get_default_dtype():
    return getattr(_local, "dtype", np.float32)


@contextmanager
def precision(dtype):
    """Temporarily change the dtype new leaf tensors are created with."""
    old = get_default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = old


def _tape_stack():
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=get_default_dtype())
        _check_finite(arr, name or "tensor constructor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._src = None

    @classmethod
    def _from_op(cls, data, requires_grad):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._src = None
        return t

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

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Op:
    __slots__ = ("name", "inputs", "output", "backward", "macs", "buffer")

    def __init__(self, name, inputs, output, backward, macs, buffer):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.macs = macs
        self.buffer = buffer


class Tape:
    """Ordered record of the ops run while the tape is active.

    With ``grad=True`` ops whose inputs require gradients keep their backward
    rule and output tensor so :meth:`backward` can replay them in reverse.
    With ``grad=False`` only sizes, aliasing and multiply-add counts are kept.
    """

    def __init__(self, grad=True):
        self.grad = grad
        self.ops = []
        self.macs = 0
        self._serial = next(_tape_serial)
        self._buffer_sizes = []
        self._buffer_created = []
        self._buffer_last_use = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        stack.remove(self)
        return False

    def _buffer_of(self, t):
        src = t._src
        if src is None or src[0] != self._serial:
            return None
        return src[1]

    def _record(self, name, inputs, out, backward, macs, view):
        k = len(self.ops)
        in_bufs = [self._buffer_of(t) for t in inputs]
        for b in in_bufs:
            if b is not None:
                self._buffer_last_use[b] = k
        if view:
            buf = in_bufs[0]
        else:
            buf = len(self._buffer_sizes)
            self._buffer_sizes.append(out.data.size)
            self._buffer_created.append(k)
            self._buffer_last_use.append(k)
        out._src = (self._serial, buf) if buf is not None else None
        if self.grad:
            op = _Op(name, inputs, out, backward, macs, buf)
        else:
            op = _Op(name, None, None, None, macs, buf)
        self.ops.append(op)
        self.macs += macs

    def peak_activation_floats(self):
        """Largest total size of op outputs that are simultaneously live.

        An output is live from the op that creates it through the last op that
        reads it (directly or through a view). Leaf tensors are not counted.
        """
        if not self.ops:
            return 0
        delta = np.zeros(len(self.ops) + 1, dtype=np.int64)
        for size, start, stop in zip(self._buffer_sizes, self._buffer_created,
                                     self._buffer_last_use):
            delta[start] += size
            delta[stop + 1] -= size
        return int(np.cumsum(delta).max())

    def backward(self, loss):
        if not self.grad:
            raise RuntimeError("tape was opened with grad=False")
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data)
        for op in reversed(self.ops):
            if op.backward is None or op.output.grad is None:
                continue
            op.backward(op.output.grad)


def _make(data, inputs, backward, name, macs=0, view=False):
    if not view:
        _check_finite(data, name)
    tape = current_tape()
    needs = tape is not None and tape.grad and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(data, needs)
    if tape is not None:
        tape._record(name, inputs, out, backward if needs else None, macs, view)
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Matrix product over the last two axes, with numpy batch broadcasting."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    if a.ndim > 2 and b.ndim > 2:
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise DimensionError(
                f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    out = np.matmul(a.data, b.data)
    macs = out.size * a.shape[-1]

    def backward(g):
        if a.requires_grad:
            _accum(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                _accum(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out, (a, b), backward, "matmul", macs)


def linear(x, w, bias=None):
    """``x @ w + bias`` as one op, w of shape (in, out)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {w.shape}")
    out = np.matmul(x.data, w.data)
    if bias is not None:
        out += bias.data
    macs = out.size * w.shape[0]
    inputs = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        if x.requires_grad:
            _accum(x, np.matmul(g, w.data.T))
        if w.requires_grad:
            _accum(w, x.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1]))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.reshape(-1, w.shape[1]).sum(axis=0))

    return _make(out, inputs, backward, "linear", macs)


# ---------------------------------------------------------------- elementwise

def add(a, b):
    _broadcast_shape(a, b, "add")

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    _broadcast_shape(a, b, "sub")

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    _broadcast_shape(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a, c):
    c = float(c)

    def backward(g):
        _accum(a, g * a.data.dtype.type(c))

    return _make(a.data * a.data.dtype.type(c), (a,), backward, "scale")


def tanh(a):
    out = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1 - out * out))

    return _make(out, (a,), backward, "tanh")


def relu(a):
    out = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _make(out, (a,), backward, "relu")


def absolute(a):
    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward, "abs")


def identity(a):
    return a


ACTIVATIONS = {"tanh": tanh, "relu": relu, "identity": identity}


# ---------------------------------------------------------------- reductions / shape

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(out), (a,), backward, "sum")


def reshape(a, shape):
    out = a.data.reshape(shape)
    view = np.shares_memory(out, a.data)

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make(out, (a,), backward, "reshape", view=view)


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)

    def backward(g):
        _accum(a, np.transpose(g, inverse))

    return _make(out, (a,), backward, "transpose", view=True)


def slice_axis(a, axis, start, stop):
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accum(a, full)

    return _make(a.data[index], (a,), backward, "slice", view=True)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                _accum(t, np.take(g, np.arange(lo, hi), axis=axis))

    return _make(out, tuple(tensors), backward, "concat")


# ---------------------------------------------------------------- softmax family

def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), backward, "softmax")


def softmax_rows(a):
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {a.shape}")
    return softmax(a, axis=1)


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        _accum(a, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), backward, "log_softmax")


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (m, c) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    m, c = logits.shape
    if labels.shape != (m,):
        raise DimensionError(f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels "
                             f"for {m} rows")
    if m == 0:
        raise InputError("cross_entropy on an empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise InputError(f"cross_entropy: labels must lie in [0, {c}), got {labels.tolist()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(m)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.data.dtype)

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1
        _accum(logits, grad * (g / m))

    return _make(loss, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------- embeddings

def gather_rows(table, ids):
    """Rows of ``table`` selected by an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise InputError(f"gather_rows: ids must lie in [0, {v})")
    out = table.data[ids]

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.ravel(), g.reshape(-1, table.shape[1]))
        _accum(table, grad)

    return _make(out, (table,), backward, "gather_rows")


def embedding_bag(table, ids, offsets, mode="sum"):
    """Sum (or mean) of table rows per bag without keeping the gathered rows.

    ``ids`` is the flat concatenation of all bags; bag i covers
    ``ids[offsets[i]:offsets[i + 1]]`` (the last bag runs to the end). Empty
    bags yield a zero row.
    """
    ids = np.asarray(ids, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    v, d = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise InputError(f"embedding_bag: ids must lie in [0, {v})")
    ends = np.append(offsets[1:], ids.size)
    counts = ends - offsets
    out = np.zeros((offsets.size, d), dtype=table.data.dtype)
    rows = table.data[ids]
    nonempty = counts > 0
    if nonempty.any():
        out[nonempty] = np.add.reduceat(rows, offsets[nonempty], axis=0)
    if mode == "mean":
        out[nonempty] /= counts[nonempty, None].astype(out.dtype)
    elif mode != "sum":
        raise ValueError(f"unknown embedding_bag mode {mode!r}")

    def backward(g):
        g = g / np.maximum(counts, 1)[:, None] if mode == "mean" else g
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, np.repeat(g, counts, axis=0))
        _accum(table, grad)

    return _make(out, (table,), backward, "embedding_bag", macs=ids.size * d)


# ---------------------------------------------------------------- normalization / pooling

def layer_norm(a, gain, bias, eps=1e-5):
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs width {d}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gain.data
            _accum(a, inv * (gx - gx.mean(axis=-1, keepdims=True)
                             - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _make(out, (a, gain, bias), backward, "layer_norm")


def max_over_time(x, counts):
    """Max over the first ``counts[i]`` positions of axis 1 for each row i of (b, T, F)."""
    counts = np.asarray(counts, dtype=np.int64)
    b, t, f = x.shape
    if counts.shape != (b,) or counts.min() < 1 or counts.max() > t:
        raise InputError(f"max_over_time: counts must lie in [1, {t}] for each of {b} rows")
    masked = np.where(np.arange(t)[None, :, None] < counts[:, None, None], x.data, -np.inf)
    arg = masked.argmax(axis=1)
    out = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, arg[:, None, :], g[:, None, :], axis=1)
        _accum(x, grad)

    return _make(np.ascontiguousarray(out), (x,), backward, "max_over_time")


# ---------------------------------------------------------------- optimizers

def _check_grad(name, grad):
    if grad is not None and not np.isfinite(grad).all():
        raise TrainingError(f"non-finite gradient in parameter {name!r}")


class SGD:
    def __init__(self, lr=0.01):
        self.lr = lr

    def step(self, params):
        """Update every tensor in the ``name -> Tensor`` mapping that has a gradient."""
        for name, p in params.items():
            _check_grad(name, p.grad)
        for p in params.values():
            if p.grad is not None:
                p.data -= p.data.dtype.type(self.lr) * p.grad


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = {}

    def step(self, params):
        """Bias-corrected Adam update; step counts are tracked per parameter name."""
        for name, p in params.items():
            _check_grad(name, p.grad)
        for name, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.t[name] = 0
            v = self.v[name]
            self.t[name] += 1
            t = self.t[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def state_dict(self):
        return {"m": self.m, "v": self.v, "t": self.t}


def sgd_step(params, lr):
    SGD(lr).step(params)


def zero_grad(params):
    for p in params.values():
        p.zero_grad()
