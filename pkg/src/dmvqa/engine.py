"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape: every operation returns a new `Tensor` carrying the forward
value, references to its parents and a closure that pushes the output
gradient one edge backwards. `backward()` seeds a scalar root with 1 and
replays the closures in reverse topological order. Gradients accumulate
across calls, so parameter grads must be zeroed between optimizer steps.

The op set is exactly what the two-stream classifier and its losses need:
matmul, add (with row-bias broadcast), elementwise multiply, tanh/sigmoid,
a numerically stable log-sigmoid, reductions, row/element gathers and
concatenation. No general broadcasting.
"""

import numpy as np

from .errors import ConfigError


class Tensor:
    """One node on the tape: a float64 array plus backward bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable leaf tensor with a persistent, named gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _result(data, parents, bw):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents)
    if out.requires_grad:
        out._backward = bw
    return out


def constant(data):
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(data)


def _topo_order(root):
    # Iterative postorder; recursion would overflow on long training graphs.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root):
    """Accumulate d(root)/d(node) into .grad over the whole graph below root."""
    if root.data.shape != ():
        raise ValueError(f"backward() needs a scalar root, got shape {root.data.shape}")
    order = _topo_order(root)
    for node in order:
        if node.grad is None and (node.requires_grad or node is root):
            node.grad = np.zeros_like(node.data)
    root.grad = root.grad + 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    """2D matrix product."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(out):
        if a.requires_grad:
            a.grad += out.grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ out.grad

    return _result(a.data @ b.data, (a, b), bw)


def add(a, b):
    """Elementwise add; also matrix + row vector for biases."""
    if a.shape == b.shape:
        def bw(out):
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        def bw(out):
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad.sum(axis=0)
    else:
        raise ConfigError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    """Elementwise subtract (same shapes only)."""
    if a.shape != b.shape:
        raise ConfigError(f"sub shape mismatch: {a.shape} - {b.shape}")

    def bw(out):
        if a.requires_grad:
            a.grad += out.grad
        if b.requires_grad:
            b.grad -= out.grad

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    """Elementwise product (same shapes only)."""
    if a.shape != b.shape:
        raise ConfigError(f"mul shape mismatch: {a.shape} * {b.shape}")

    def bw(out):
        if a.requires_grad:
            a.grad += out.grad * b.data
        if b.requires_grad:
            b.grad += out.grad * a.data

    return _result(a.data * b.data, (a, b), bw)


def neg(a):
    def bw(out):
        if a.requires_grad:
            a.grad -= out.grad

    return _result(-a.data, (a,), bw)


def scale(a, c):
    """Multiply by a python float."""
    c = float(c)

    def bw(out):
        if a.requires_grad:
            a.grad += c * out.grad

    return _result(c * a.data, (a,), bw)


def sigmoid(a):
    # Stable on both tails: exp of a negative magnitude only.
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bw(out):
        if a.requires_grad:
            a.grad += out.grad * y * (1.0 - y)

    return _result(y, (a,), bw)


def log_sigmoid(a):
    """log(sigmoid(x)) as -softplus(-x); never -inf/nan for finite input."""
    x = a.data
    y = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def bw(out):
        if a.requires_grad:
            # d/dx log(sigmoid(x)) = sigmoid(-x)
            xx = -x
            s = np.empty_like(xx)
            pos = xx >= 0
            s[pos] = 1.0 / (1.0 + np.exp(-xx[pos]))
            ex = np.exp(xx[~pos])
            s[~pos] = ex / (1.0 + ex)
            a.grad += out.grad * s

    return _result(y, (a,), bw)


def tanh(a):
    y = np.tanh(a.data)

    def bw(out):
        if a.requires_grad:
            a.grad += out.grad * (1.0 - y * y)

    return _result(y, (a,), bw)


def relu(a):
    y = np.maximum(a.data, 0.0)

    def bw(out):
        if a.requires_grad:
            # subgradient 0 at the kink
            a.grad += out.grad * (a.data > 0.0)

    return _result(y, (a,), bw)


def mean(a):
    n = a.data.size

    def bw(out):
        if a.requires_grad:
            a.grad += out.grad / n

    return _result(np.mean(a.data), (a,), bw)


def sum_all(a):
    def bw(out):
        if a.requires_grad:
            a.grad += out.grad * np.ones_like(a.data)

    return _result(np.sum(a.data), (a,), bw)


def lookup(table, ids):
    """Embedding lookup: select rows of a 2D table by integer id."""
    if table.data.ndim != 2:
        raise ConfigError(f"lookup needs a 2D table, got shape {table.shape}")
    idx = np.asarray(ids, dtype=np.intp)

    def bw(out):
        if table.requires_grad:
            np.add.at(table.grad, idx, out.grad)

    return _result(table.data[idx], (table,), bw)


# Row selection from any 2D tensor is the same gather.
gather_rows = lookup


def gather_pairs(m, rows, cols):
    """Pick m[rows[k], cols[k]] into a 1D vector."""
    if m.data.ndim != 2:
        raise ConfigError(f"gather_pairs needs a 2D input, got shape {m.shape}")
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)

    def bw(out):
        if m.requires_grad:
            np.add.at(m.grad, (r, c), out.grad)

    return _result(m.data[r, c], (m,), bw)


def take(v, indices):
    """Pick entries of a 1D vector."""
    if v.data.ndim != 1:
        raise ConfigError(f"take needs a 1D input, got shape {v.shape}")
    idx = np.asarray(indices, dtype=np.intp)

    def bw(out):
        if v.requires_grad:
            np.add.at(v.grad, idx, out.grad)

    return _result(v.data[idx], (v,), bw)


def concat(parts, axis=1):
    """Concatenate 2D tensors along an axis."""
    parts = tuple(parts)
    ndim = parts[0].data.ndim
    if any(p.data.ndim != ndim for p in parts):
        raise ConfigError(f"concat rank mismatch: {[p.shape for p in parts]}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                if axis == 0:
                    p.grad += out.grad[lo:hi]
                else:
                    p.grad += out.grad[:, lo:hi]

    return _result(np.concatenate([p.data for p in parts], axis=axis), parts, bw)


def detach(a):
    """Constant copy of a tensor: blocks gradient flow."""
    return Tensor(a.data.copy())


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction. Raises on non-finite gradients."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class SGD:
    """Plain gradient descent, kept for ablation."""

    def __init__(self, params, lr=1e-3):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
            p.data -= self.lr * g

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# Verification helpers
# ---------------------------------------------------------------------------

def finite_diff_gradient(loss_fn, params, eps=1e-5):
    """Central-difference gradient of loss_fn() for each parameter entry.

    loss_fn must be deterministic and read the parameters' current .data;
    it may return a python float or a scalar Tensor. Returns one array
    per parameter, in order.
    """
    if eps <= 0:
        raise ConfigError(f"finite difference step must be positive, got {eps}")

    def value():
        out = loss_fn()
        return out.item() if isinstance(out, Tensor) else float(out)

    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = value()
            flat[i] = orig - eps
            f_minus = value()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_error(a, b):
    """Norm-based relative difference between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
