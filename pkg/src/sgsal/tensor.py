"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything runs in 64-bit, single threaded per graph. Any NaN/Inf produced
by an operation is a hard error, so numerical bugs surface immediately
instead of propagating. There is deliberately no general broadcasting:
the only implicit shape rule is adding a 1-D bias to the trailing axis.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "const",
    "param",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "sum_",
    "mean_",
    "relu",
    "clamp",
    "sigmoid",
    "inverse_sigmoid",
    "log",
    "exp",
    "power",
    "softmax",
    "log_softmax",
    "weighted_sum",
    "take_rows",
    "linear",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (e.g. backward on a non-scalar)."""


def _check_finite(arr):
    # Fast path: a non-finite entry always makes the sum non-finite. The
    # precise check then distinguishes a real NaN/Inf from a benign
    # overflow of the sum itself.
    if not np.isfinite(arr.sum()) and not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite value in tensor data")


class Tensor:
    """A dense float64 array node of a reverse-mode computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64, copy=True)
        _check_finite(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor
        with requires_grad=True. Repeated calls keep accumulating until
        grads are zeroed."""
        if self.data.size != 1:
            raise GraphError("backward() requires a scalar loss")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # Operator sugar for the common cases.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def const(data):
    return Tensor(data, requires_grad=False)


def param(data):
    return Tensor(data, requires_grad=True)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, vjp):
    out = Tensor.__new__(Tensor)
    arr = np.asarray(data, dtype=np.float64)
    _check_finite(arr)
    out.data = arr
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def add(a, b):
    """Elementwise add. The single broadcast allowed: b may be a 1-D bias
    matching a's trailing axis."""
    a, b = _wrap(a), _wrap(b)
    if a.shape == b.shape:
        def vjp(g):
            return g, g
        return _make(a.data + b.data, (a, b), vjp)
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        lead = tuple(range(a.ndim - 1))

        def vjp(g):
            return g, g.sum(axis=lead) if lead else g
        return _make(a.data + b.data, (a, b), vjp)
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        return g, -g
    return _make(a.data - b.data, (a, b), vjp)


def neg(a):
    a = _wrap(a)

    def vjp(g):
        return (-g,)
    return _make(-a.data, (a,), vjp)


def mul(a, b):
    """Elementwise product of same-shape tensors, or tensor * python scalar."""
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        s = float(b)

        def vjp_s(g):
            return (g * s,)
        return _make(a.data * s, (a,), vjp_s)
    if isinstance(a, (int, float)) and isinstance(b, Tensor):
        return mul(b, a)
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        return g * b.data, g * a.data
    return _make(a.data * b.data, (a, b), vjp)


def matmul(a, b):
    """Dense matrix product, 2-D or batched 3-D with equal batch dims."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeError(f"matmul: ranks {a.ndim} and {b.ndim} unsupported")
    if a.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch dims differ {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ {a.shape} vs {b.shape}")

    def vjp(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return ga, gb
    return _make(np.matmul(a.data, b.data), (a, b), vjp)


def transpose(a, axes=None):
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv),)
    return _make(a.data.transpose(axes), (a,), vjp)


def reshape(a, shape):
    a = _wrap(a)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)
    return _make(a.data.reshape(shape), (a,), vjp)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))
    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), vjp)


def sum_(a, axis=None):
    a = _wrap(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        ge = np.expand_dims(g, axis)
        return (np.broadcast_to(ge, shape).copy(),)
    return _make(a.data.sum(axis=axis), (a,), vjp)


def mean_(a, axis=None):
    a = _wrap(a)
    shape = a.shape
    n = a.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return (np.full(shape, float(g) / n),)
        ge = np.expand_dims(g, axis)
        return (np.broadcast_to(ge, shape).copy() / n,)
    return _make(a.data.mean(axis=axis), (a,), vjp)


def relu(a):
    """max(x, 0); subgradient at 0 is 0."""
    a = _wrap(a)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)
    return _make(np.where(mask, a.data, 0.0), (a,), vjp)


def sigmoid(a):
    a = _wrap(a)
    y = np.where(a.data >= 0,
                 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def vjp(g):
        return (g * y * (1.0 - y),)
    return _make(y, (a,), vjp)


def inverse_sigmoid(a, eps=1e-5):
    """logit of a clamped to [eps, 1-eps]; gradient is zero in the clamped
    region, matching the clamp semantics."""
    if not (0.0 < eps < 0.5):
        raise ValueError("inverse_sigmoid: eps must be in (0, 0.5)")
    a = _wrap(a)
    p = np.clip(a.data, eps, 1.0 - eps)
    inside = (a.data > eps) & (a.data < 1.0 - eps)

    def vjp(g):
        return (np.where(inside, g / (p * (1.0 - p)), 0.0),)
    return _make(np.log(p / (1.0 - p)), (a,), vjp)


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient is zero in the clipped region."""
    if not lo < hi:
        raise ValueError("clamp: need lo < hi")
    a = _wrap(a)
    inside = (a.data > lo) & (a.data < hi)

    def vjp(g):
        return (np.where(inside, g, 0.0),)
    return _make(np.clip(a.data, lo, hi), (a,), vjp)


def log(a):
    a = _wrap(a)

    def vjp(g):
        return (g / a.data,)
    return _make(np.log(a.data), (a,), vjp)


def exp(a):
    a = _wrap(a)
    y = np.exp(a.data)

    def vjp(g):
        return (g * y,)
    return _make(y, (a,), vjp)


def power(a, k):
    """Elementwise a**k for a constant float exponent."""
    a = _wrap(a)
    k = float(k)
    if k == 0.0:
        def vjp0(g):
            return (np.zeros_like(g),)
        return _make(np.ones_like(a.data), (a,), vjp0)

    def vjp(g):
        return (g * k * np.power(a.data, k - 1.0),)
    return _make(np.power(a.data, k), (a,), vjp)


def softmax(a, axis=-1):
    """Softmax whose normalizer sums the exponentials in sorted order, so
    the output is invariant to permutations along the softmax axis down to
    the last bit (plain summation order would leak into the rounding)."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = np.ascontiguousarray(np.sort(e, axis=axis)).sum(axis=axis,
                                                            keepdims=True)
    y = e / denom

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)
    return _make(y, (a,), vjp)


def log_softmax(a, axis=-1):
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)

    def vjp(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)
    return _make(y, (a,), vjp)


def weighted_sum(w, v):
    """Batched contraction out[h, i, :] = sum_k w[h, i, k] * v[h, k, :],
    with the sum taken in sorted order of the addends. Functionally a
    batched matmul, but permuting the contracted axis (consistently in w
    and v) cannot change the result, which plain matmul does not guarantee
    in floating point. Used for the attention combine over entities."""
    w = _wrap(w)
    v = _wrap(v)
    if w.ndim != 3 or v.ndim != 3 or w.shape[2] != v.shape[1] \
            or w.shape[0] != v.shape[0]:
        raise ShapeError(f"weighted_sum: {w.shape} vs {v.shape}")
    prod = w.data[:, :, :, None] * v.data[:, None, :, :]
    out = np.ascontiguousarray(np.sort(prod, axis=2)).sum(axis=2)

    def vjp(g):
        return (np.matmul(g, np.swapaxes(v.data, 1, 2)),
                np.matmul(np.swapaxes(w.data, 1, 2), g))
    return _make(out, (w, v), vjp)


def take_rows(a, indices):
    """Gather rows along axis 0. Forward is an exact copy; backward
    scatter-adds, so repeated indices accumulate."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("take_rows: indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("take_rows: index out of range")

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return _make(a.data[idx], (a,), vjp)


def linear(x, w, b=None):
    """x @ w (+ b). x: (..., in), w: (in, out), b: (out,)."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def grad_check(f, x, h=1e-5):
    """Max relative error between the analytic gradient of the scalar
    function f at x and central finite differences with step h."""
    if not (1e-7 <= h <= 1e-3):
        raise ValueError("grad_check: h must be in [1e-7, 1e-3]")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(base, requires_grad=True)
    out = f(xt)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise GraphError("grad_check: f must be scalar-valued")
    if out.requires_grad:
        out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    flat = base.ravel()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        hi = f(Tensor((flat + bump).reshape(base.shape))).data.item()
        lo = f(Tensor((flat - bump).reshape(base.shape))).data.item()
        fd[i] = (hi - lo) / (2.0 * h)
    fd = fd.reshape(base.shape)
    denom = np.abs(analytic) + np.abs(fd) + 1e-12
    return float(np.max(np.abs(analytic - fd) / denom))
