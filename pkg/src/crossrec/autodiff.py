"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every op below dispatches on its argument types: plain ndarrays flow through
as plain numpy (no tape, no overhead), while :class:`Var` arguments build a
computation graph whose gradients :func:`backward` accumulates. Forward code
throughout the package is therefore written once and reused for fast
evaluation and for training. Gradients are exact for the graph as built;
quantities that must not receive gradients (bandwidths, running statistics,
noise draws) enter as raw arrays or via :func:`detach`.
"""

import numpy as np

__all__ = [
    "Var", "parameter", "constant", "detach", "value_of", "backward",
    "add", "sub", "mul", "div", "neg", "matmul", "sparse_dot",
    "exp", "log", "tanh", "sigmoid", "elu", "softplus", "square", "sqrt", "clip",
    "vsum", "vmean", "concat_rows", "concat_cols", "take_rows", "take_cols",
    "reshape", "transpose",
]


class Var:
    """A node in the reverse-mode tape wrapping a float64 ndarray."""

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    # Arithmetic sugar so composed expressions stay readable.
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

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def parameter(x) -> Var:
    """Wrap an array as a leaf variable that will receive a gradient."""
    return Var(x)


def constant(x) -> Var:
    """Wrap an array as a leaf; identical to parameter but reads clearer."""
    return Var(x)


def detach(x):
    """Return the plain array value, cutting any tape connection."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def value_of(x):
    """Alias of detach for call sites that read better with this name."""
    return detach(x)


def _is_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _as_array(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(var, grad):
    if not isinstance(var, Var):
        return
    if var.grad is None:
        var.grad = np.zeros_like(var.value)
    var.grad += grad


def backward(root: Var) -> None:
    """Populate ``.grad`` on every Var reachable from a scalar root."""
    if root.value.size != 1:
        raise ValueError("backward requires a scalar root")
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
        for parent in node.parents:
            if isinstance(parent, Var) and id(parent) not in visited:
                stack.append((parent, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive ops

def add(a, b):
    if not _is_var(a, b):
        return np.add(a, b)
    av, bv = _as_array(a), _as_array(b)
    out_val = av + bv

    def back(g):
        _accumulate(a, _unbroadcast(g, av.shape))
        _accumulate(b, _unbroadcast(g, bv.shape))

    return Var(out_val, tuple(p for p in (a, b) if isinstance(p, Var)), back)


def sub(a, b):
    if not _is_var(a, b):
        return np.subtract(a, b)
    av, bv = _as_array(a), _as_array(b)
    out_val = av - bv

    def back(g):
        _accumulate(a, _unbroadcast(g, av.shape))
        _accumulate(b, _unbroadcast(-g, bv.shape))

    return Var(out_val, tuple(p for p in (a, b) if isinstance(p, Var)), back)


def mul(a, b):
    if not _is_var(a, b):
        return np.multiply(a, b)
    av, bv = _as_array(a), _as_array(b)
    out_val = av * bv

    def back(g):
        _accumulate(a, _unbroadcast(g * bv, av.shape))
        _accumulate(b, _unbroadcast(g * av, bv.shape))

    return Var(out_val, tuple(p for p in (a, b) if isinstance(p, Var)), back)


def div(a, b):
    if not _is_var(a, b):
        return np.divide(a, b)
    av, bv = _as_array(a), _as_array(b)
    out_val = av / bv

    def back(g):
        _accumulate(a, _unbroadcast(g / bv, av.shape))
        _accumulate(b, _unbroadcast(-g * av / (bv * bv), bv.shape))

    return Var(out_val, tuple(p for p in (a, b) if isinstance(p, Var)), back)


def neg(a):
    if not _is_var(a):
        return np.negative(a)

    def back(g):
        _accumulate(a, -g)

    return Var(-a.value, (a,), back)


def matmul(a, b):
    if not _is_var(a, b):
        return np.matmul(a, b)
    av, bv = _as_array(a), _as_array(b)
    out_val = av @ bv

    def back(g):
        _accumulate(a, g @ bv.T)
        _accumulate(b, av.T @ g)

    return Var(out_val, tuple(p for p in (a, b) if isinstance(p, Var)), back)


def sparse_dot(mat, x):
    """Product ``mat @ x`` with a constant scipy sparse matrix."""
    if not _is_var(x):
        return mat @ np.asarray(x, dtype=np.float64)
    out_val = mat @ x.value
    mat_t = mat.T.tocsr()

    def back(g):
        _accumulate(x, mat_t @ g)

    return Var(out_val, (x,), back)


def exp(a):
    if not _is_var(a):
        return np.exp(a)
    out_val = np.exp(a.value)

    def back(g):
        _accumulate(a, g * out_val)

    return Var(out_val, (a,), back)


def log(a):
    if not _is_var(a):
        return np.log(a)

    def back(g):
        _accumulate(a, g / a.value)

    return Var(np.log(a.value), (a,), back)


def tanh(a):
    if not _is_var(a):
        return np.tanh(a)
    out_val = np.tanh(a.value)

    def back(g):
        _accumulate(a, g * (1.0 - out_val * out_val))

    return Var(out_val, (a,), back)


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    if not _is_var(a):
        return _sigmoid_np(np.asarray(a, dtype=np.float64))
    out_val = _sigmoid_np(a.value)

    def back(g):
        _accumulate(a, g * out_val * (1.0 - out_val))

    return Var(out_val, (a,), back)


def elu(a):
    """Exponential linear unit with unit slope: x for x>0 else exp(x)-1."""
    if not _is_var(a):
        a = np.asarray(a, dtype=np.float64)
        return np.where(a > 0, a, np.expm1(a))
    val = a.value
    out_val = np.where(val > 0, val, np.expm1(val))
    deriv = np.where(val > 0, 1.0, out_val + 1.0)

    def back(g):
        _accumulate(a, g * deriv)

    return Var(out_val, (a,), back)


def softplus(a):
    """log(1 + exp(x)) computed stably for large |x|."""
    if not _is_var(a):
        return np.logaddexp(0.0, a)
    out_val = np.logaddexp(0.0, a.value)
    deriv = _sigmoid_np(a.value)

    def back(g):
        _accumulate(a, g * deriv)

    return Var(out_val, (a,), back)


def square(a):
    if not _is_var(a):
        return np.square(a)

    def back(g):
        _accumulate(a, g * 2.0 * a.value)

    return Var(np.square(a.value), (a,), back)


def sqrt(a):
    if not _is_var(a):
        return np.sqrt(a)
    out_val = np.sqrt(a.value)

    def back(g):
        _accumulate(a, g * 0.5 / out_val)

    return Var(out_val, (a,), back)


def clip(a, lo, hi):
    """Clamp with pass-through gradient strictly inside [lo, hi]."""
    if not _is_var(a):
        return np.clip(a, lo, hi)
    val = a.value
    out_val = np.clip(val, lo, hi)
    mask = (val >= (lo if lo is not None else -np.inf)) & (val <= (hi if hi is not None else np.inf))

    def back(g):
        _accumulate(a, g * mask)

    return Var(out_val, (a,), back)


def vsum(a, axis=None, keepdims=False):
    if not _is_var(a):
        return np.sum(a, axis=axis, keepdims=keepdims)
    out_val = np.sum(a.value, axis=axis, keepdims=keepdims)
    in_shape = a.value.shape

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, in_shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, in_shape).copy())

    return Var(out_val, (a,), back)


def vmean(a, axis=None, keepdims=False):
    if not _is_var(a):
        return np.mean(a, axis=axis, keepdims=keepdims)
    size = a.value.size if axis is None else a.value.shape[axis]
    return div(vsum(a, axis=axis, keepdims=keepdims), float(size))


def concat_rows(parts):
    if not any(isinstance(p, Var) for p in parts):
        return np.concatenate(parts, axis=0)
    vals = [_as_array(p) for p in parts]
    out_val = np.concatenate(vals, axis=0)
    heights = [v.shape[0] for v in vals]

    def back(g):
        start = 0
        for part, height in zip(parts, heights):
            _accumulate(part, g[start:start + height])
            start += height

    return Var(out_val, tuple(p for p in parts if isinstance(p, Var)), back)


def concat_cols(parts):
    if not any(isinstance(p, Var) for p in parts):
        return np.concatenate(parts, axis=1)
    vals = [_as_array(p) for p in parts]
    out_val = np.concatenate(vals, axis=1)
    widths = [v.shape[1] for v in vals]

    def back(g):
        start = 0
        for part, width in zip(parts, widths):
            _accumulate(part, g[:, start:start + width])
            start += width

    return Var(out_val, tuple(p for p in parts if isinstance(p, Var)), back)


def take_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    if not _is_var(a):
        return np.asarray(a)[idx]
    out_val = a.value[idx]
    in_shape = a.value.shape

    def back(g):
        acc = np.zeros(in_shape, dtype=np.float64)
        np.add.at(acc, idx, g)
        _accumulate(a, acc)

    return Var(out_val, (a,), back)


def take_cols(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    if not _is_var(a):
        return np.asarray(a)[:, idx]
    out_val = a.value[:, idx]
    in_shape = a.value.shape

    def back(g):
        acc_t = np.zeros((in_shape[1], in_shape[0]), dtype=np.float64)
        np.add.at(acc_t, idx, g.T)
        _accumulate(a, acc_t.T)

    return Var(out_val, (a,), back)


def reshape(a, shape):
    if not _is_var(a):
        return np.reshape(a, shape)
    in_shape = a.value.shape

    def back(g):
        _accumulate(a, g.reshape(in_shape))

    return Var(a.value.reshape(shape), (a,), back)


def transpose(a):
    if not _is_var(a):
        return np.transpose(a)

    def back(g):
        _accumulate(a, g.T)

    return Var(a.value.T, (a,), back)
