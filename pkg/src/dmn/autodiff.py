"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Just enough machinery to train the traffic model: matmul, elementwise
arithmetic, tanh/sigmoid/exp/log/softplus, softmax, log-sum-exp,
concatenation, embedding row lookup, reductions, plus Adam with
per-group freezing and a finite-difference gradient checker.
"""

from __future__ import annotations

import numpy as np


class Value:
    """A node in the computation graph wrapping a dense float64 array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root, got shape %s"
                             % (self.data.shape,))
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        out = Value(self.data + other.data, parents=(self, other))

        def bwd(g):
            self.grad += _unbroadcast(g, self.data.shape)
            other.grad += _unbroadcast(g, other.data.shape)
        out._backward = bwd
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _lift(other)
        out = Value(self.data * other.data, parents=(self, other))

        def bwd(g):
            self.grad += _unbroadcast(g * other.data, self.data.shape)
            other.grad += _unbroadcast(g * self.data, other.data.shape)
        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def matmul(self, other):
        other = _lift(other)
        out = Value(self.data @ other.data, parents=(self, other))

        def bwd(g):
            a, b = self.data, other.data
            ga = g @ b.T if b.ndim == 2 else np.outer(g, b)
            if a.ndim == 1:
                self.grad += ga if ga.ndim == 1 else ga.reshape(a.shape)
                other.grad += np.outer(a, g) if b.ndim == 2 else a * g
            else:
                self.grad += ga
                other.grad += a.T @ g
        out._backward = bwd
        return out

    __matmul__ = matmul

    # -- reductions ------------------------------------------------------

    def sum(self):
        out = Value(self.data.sum(), parents=(self,))

        def bwd(g):
            self.grad += g * np.ones_like(self.data)
        out._backward = bwd
        return out

    def __repr__(self):
        return "Value(shape=%s, requires_grad=%s)" % (self.data.shape,
                                                      self.requires_grad)


def _lift(x):
    return x if isinstance(x, Value) else Value(x)


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


# -- nonlinearities ------------------------------------------------------

def tanh(x):
    x = _lift(x)
    y = np.tanh(x.data)
    out = Value(y, parents=(x,))

    def bwd(g):
        x.grad += g * (1.0 - y * y)
    out._backward = bwd
    return out


def _stable_sigmoid(z):
    with np.errstate(over="ignore"):
        return np.where(z >= 0,
                        1.0 / (1.0 + np.exp(-z)),
                        np.exp(np.clip(z, -500, None))
                        / (1.0 + np.exp(np.clip(z, -500, None))))


def sigmoid(x):
    x = _lift(x)
    y = _stable_sigmoid(x.data)
    out = Value(y, parents=(x,))

    def bwd(g):
        x.grad += g * y * (1.0 - y)
    out._backward = bwd
    return out


def exp(x):
    x = _lift(x)
    y = np.exp(x.data)
    out = Value(y, parents=(x,))

    def bwd(g):
        x.grad += g * y
    out._backward = bwd
    return out


def log(x):
    x = _lift(x)
    out = Value(np.log(x.data), parents=(x,))

    def bwd(g):
        x.grad += g / x.data
    out._backward = bwd
    return out


def softplus(x):
    """log(1 + e^x), computed as max(x, 0) + log1p(e^-|x|) for stability."""
    x = _lift(x)
    y = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    out = Value(y, parents=(x,))

    def bwd(g):
        x.grad += g * _stable_sigmoid(x.data)
    out._backward = bwd
    return out


def logsumexp(x):
    """Overflow-safe log-sum-exp over the last axis of a vector Value."""
    x = _lift(x)
    m = x.data.max(axis=-1, keepdims=True)
    z = np.exp(x.data - m)
    s = z.sum(axis=-1, keepdims=True)
    y = (m + np.log(s)).reshape(x.data.shape[:-1])
    out = Value(y, parents=(x,))

    def bwd(g):
        x.grad += np.expand_dims(np.asarray(g), -1) * (z / s)
    out._backward = bwd
    return out


def softmax(x):
    """Softmax over the last axis; rows land on the probability simplex."""
    x = _lift(x)
    m = x.data.max(axis=-1, keepdims=True)
    z = np.exp(x.data - m)
    y = z / z.sum(axis=-1, keepdims=True)
    out = Value(y, parents=(x,))

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        x.grad += y * (g - dot)
    out._backward = bwd
    return out


def log_softmax(x):
    x = _lift(x)
    m = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = Value(y, parents=(x,))

    def bwd(g):
        p = np.exp(y)
        x.grad += g - p * np.asarray(g).sum(axis=-1, keepdims=True)
    out._backward = bwd
    return out


def concat(values):
    """Concatenate 1-D Values into one vector."""
    values = [_lift(v) for v in values]
    out = Value(np.concatenate([v.data for v in values]), parents=tuple(values))
    sizes = [v.data.size for v in values]

    def bwd(g):
        off = 0
        for v, n in zip(values, sizes):
            v.grad += g[off:off + n].reshape(v.data.shape)
            off += n
    out._backward = bwd
    return out


def embedding(table, index):
    """Select one row of a 2-D table; backward scatter-adds into the row."""
    table = _lift(table)
    index = int(index)
    if not (0 <= index < table.data.shape[0]):
        raise IndexError("embedding index %d out of range [0, %d)"
                         % (index, table.data.shape[0]))
    out = Value(table.data[index].copy(), parents=(table,))

    def bwd(g):
        table.grad[index] += g
    out._backward = bwd
    return out


def pick(x, index):
    """Select a single element of a vector Value (keeps gradient flow)."""
    x = _lift(x)
    index = int(index)
    out = Value(x.data[index], parents=(x,))

    def bwd(g):
        x.grad[index] += g
    out._backward = bwd
    return out


# -- parameters and the optimizer ----------------------------------------

class ParamGroup:
    """A named set of leaf parameters that freezes as a unit."""

    def __init__(self, name, params, frozen=False):
        self.name = name
        self.params = list(params)
        self.frozen = frozen
        for p in self.params:
            p.requires_grad = True

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Adam:
    """Bias-corrected Adam over ParamGroups; frozen groups are untouched."""

    def __init__(self, groups, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.groups = list(groups)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}

    def zero_grad(self):
        for g in self.groups:
            g.zero_grad()

    def step(self):
        for g in self.groups:
            if g.frozen:
                continue
            for p in g.params:
                if not np.all(np.isfinite(p.grad)):
                    raise FloatingPointError(
                        "non-finite gradient in parameter group %r" % g.name)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for g in self.groups:
            if g.frozen:
                continue
            for p in g.params:
                key = id(p)
                m = self._m.get(key)
                if m is None:
                    m = self._m[key] = np.zeros_like(p.data)
                v = self._v.get(key)
                if v is None:
                    v = self._v[key] = np.zeros_like(p.data)
                m[...] = b1 * m + (1 - b1) * p.grad
                v[...] = b2 * v + (1 - b2) * p.grad * p.grad
                mhat = m / (1 - b1 ** self.t)
                vhat = v / (1 - b2 ** self.t)
                p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def finite_diff_check(f, params, h=1e-5, atol=1e-6):
    """Max relative error between analytic and central-difference gradients.

    `f` takes no arguments and returns a scalar Value built from `params`
    (a ParamGroup or plain list of leaf Values). `atol` floors the
    denominator: central differences carry roundoff noise of roughly
    1e-16 * |f| / h, so near-zero gradient coordinates are compared
    absolutely rather than relatively.
    """
    leaves = params.params if isinstance(params, ParamGroup) else list(params)
    for p in leaves:
        p.zero_grad()
    f().backward()
    analytic = [p.grad.copy() for p in leaves]

    worst = 0.0
    for p, grad in zip(leaves, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            denom = abs(gflat[i]) + abs(numeric) + atol
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
