"""Dense float64 arrays with tape-based reverse-mode differentiation.

Every operation records its parents and a closure that maps the output
gradient to parent gradients.  ``grad`` walks the recorded graph in reverse
topological order.  Broadcasting follows numpy; gradients are summed back to
the parent shape.
"""
from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5

_recording = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


class Tensor:
    """A float64 array that may take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

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
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: (g * sigmoid(a.data),))


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a):
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    return _make(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, a.shape),))


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(a, index):
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


def take_rows(a, idx):
    """Gather along axis 0 with an integer index array."""
    a = as_tensor(a)
    idx = np.asarray(idx)

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands with ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"shape mismatch in matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------- layers

def dense(x, W, b=None):
    """Affine map ``x @ W + b`` on the last axis."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[-2]:
        raise ValueError(f"dense: input dim {x.shape[-1]} does not match weight {W.shape}")
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, x.shape[0]))
    out = matmul(x, W)
    if b is not None:
        out = out + b
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def layer_norm(x, eps=LAYER_NORM_EPS):
    """Normalise the last axis to zero mean and unit variance (no affine)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (x,), backward)


def softmax(logits, axis=-1):
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (logits,), backward)


def log_softmax(logits, axis=-1):
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (logits,), backward)


# ---------------------------------------------------------------- backward pass

def _toposort(root):
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


def grad(loss, params, free_graph=True):
    """Gradients of a scalar ``loss`` with respect to each tensor in ``params``.

    Parameters not reached from ``loss`` get a zero gradient and a log entry.
    """
    if loss.size != 1:
        raise ValueError(f"grad needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    order = _toposort(loss) if loss.requires_grad else [loss]
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = []
    for p in params:
        g = grads.get(id(p))
        if g is None:
            logger.warning("parameter %s is not on the recorded graph; gradient zero-filled",
                           p.name or tuple(p.shape))
            g = np.zeros_like(p.data)
        out.append(g)
    if free_graph:
        for node in order:
            node._parents = ()
            node._backward = None
    return out


# ---------------------------------------------------------------- Gaussians

@dataclass
class GaussianDiag:
    """Diagonal Gaussian over the last axis of ``mean``."""

    mean: Tensor
    var: Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.var = as_tensor(self.var)
        if self.mean.shape != self.var.shape:
            raise ValueError(f"mean shape {self.mean.shape} != var shape {self.var.shape}")
        if not np.all(self.var.data > 0):
            raise ValueError("GaussianDiag variance must be strictly positive")

    @property
    def dim(self):
        return self.mean.shape[-1]

    def log_prob(self, y):
        """Log-density summed over the last axis."""
        y = as_tensor(y)
        diff = y - self.mean
        return (-0.5 * (math.log(2.0 * math.pi) + log(self.var) + diff * diff / self.var)).sum(axis=-1)


def kl_gaussian_diag(q, p):
    """KL(q || p) between diagonal Gaussians, summed over the last axis."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ValueError("kl_gaussian_diag: dimension mismatch")
    if np.any(q.var.data <= 0) or np.any(p.var.data <= 0):
        raise ValueError("kl_gaussian_diag: nonpositive variance")
    diff = q.mean - p.mean
    terms = log(p.var) - log(q.var) + (q.var + diff * diff) / p.var - 1.0
    return 0.5 * terms.sum(axis=-1)


def sample_gaussian(dist, rng, shape=None):
    """Reparameterised draw ``mean + sqrt(var) * eps``.

    ``shape`` prepends extra leading sample axes.
    """
    lead = tuple(shape) if shape is not None else ()
    eps = rng.standard_normal(lead + dist.mean.shape)
    return dist.mean + sqrt(dist.var) * eps


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(params, grads, state):
    """One in-place Adam update of ``params`` (list of Tensor) with bias correction.

    Raises ``NonFiniteGradient`` and leaves everything untouched if any
    gradient holds NaN or inf.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {p.name or p.shape}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def parameter(shape, rng=None, scale=None, name=None, fill=0.0):
    """A trainable tensor; drawn from N(0, scale^2) when ``rng`` is given."""
    if rng is None:
        data = np.full(shape, fill, dtype=np.float64)
    else:
        data = rng.standard_normal(shape) * (1.0 if scale is None else scale)
    return Tensor(data, requires_grad=True, name=name)
