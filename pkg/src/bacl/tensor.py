"""Dense tensors with reverse-mode differentiation on an explicit tape.

Tensors wrap numpy arrays (float64 by default, float32 selectable) and are
immutable values. A Tape is a Wengert list: every primitive applied to a
tensor that requires gradients appends one node, and ``backward`` sweeps the
list once in reverse recording order, so runs are bit-reproducible.

Only rank-0/1/2/3 dense arrays are supported and the only broadcast allowed
is row-vector bias addition (``add_row``); everything else is explicit
reshape/concat, which keeps the tape auditable.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float64

# Names of all registered primitives; the gradient test suite iterates this.
PRIMITIVES: list[str] = []


def _register(name):
    PRIMITIVES.append(name)


class Tape:
    """Recorded primitive operations plus per-node adjoint accumulators."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def leaf(self, data, requires=True):
        """Attach an input tensor (usually a parameter) to this tape."""
        t = Tensor(data)
        t.tape = self
        t.requires = requires
        return t

    def backward(self, loss):
        """Accumulate adjoints of ``loss`` w.r.t. every recorded node.

        ``loss`` must be a scalar-sized tensor recorded on this tape. Each
        node is visited exactly once, in reverse recording order.
        """
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar-sized, got shape {loss.data.shape}")
        for node in self._nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            if node.grad is None or node._bwd is None:
                continue
            for parent, g in zip(node._parents, node._bwd(node.grad)):
                if g is None or not parent.requires:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy()
                else:
                    parent.grad += g


class Tensor:
    """Immutable dense array, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "requires", "grad", "_parents", "_bwd")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        self.data = arr
        self.tape = None
        self.requires = False
        self.grad = None
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires={self.requires})"


def _lift(x):
    if isinstance(x, Tensor):
        return x
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(x, dtype=DEFAULT_DTYPE)
    t.tape = None
    t.requires = False
    t.grad = None
    t._parents = ()
    t._bwd = None
    return t


def _result(data, parents, bwd):
    """Build an op output; record it only if some parent requires gradients."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tape = None
    for p in parents:
        if p.requires:
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise ValueError("operands recorded on different tapes")
    if tape is None:
        out.tape = None
        out.requires = False
        out._parents = ()
        out._bwd = None
    else:
        out.tape = tape
        out.requires = True
        out._parents = tuple(parents)
        out._bwd = bwd
        tape._nodes.append(out)
    return out


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# arithmetic


_register("add")


def add(a, b):
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


_register("sub")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


_register("mul")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


_register("neg")


def neg(a):
    a = _lift(a)
    return _result(-a.data, (a,), lambda g: (-g,))


_register("scale")


def scale(a, c):
    """Multiply by a python scalar constant."""
    a = _lift(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


_register("add_scalar")


def add_scalar(a, c):
    a = _lift(a)
    return _result(a.data + float(c), (a,), lambda g: (g,))


_register("add_row")


def add_row(a, v):
    """Add a row vector to every row of a 2-D tensor (bias broadcast)."""
    a, v = _lift(a), _lift(v)
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[1] != v.data.shape[0]:
        raise ValueError(f"add_row: incompatible shapes {a.data.shape}, {v.data.shape}")
    return _result(a.data + v.data, (a, v), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# linear algebra


_register("matmul")


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner extents {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


_register("bmm")


def bmm(a, b):
    """Batched matmul over leading axis: (B,n,k) @ (B,k,m) -> (B,n,m)."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ValueError("bmm expects 3-D operands")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ValueError(f"bmm: incompatible shapes {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _result(
        ad @ bd,
        (a, b),
        lambda g: (g @ bd.swapaxes(1, 2), ad.swapaxes(1, 2) @ g),
    )


_register("transpose")


def transpose(a):
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return _result(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


_register("swap_last2")


def swap_last2(a):
    a = _lift(a)
    if a.data.ndim != 3:
        raise ValueError("swap_last2 expects a 3-D tensor")
    return _result(
        np.ascontiguousarray(a.data.swapaxes(1, 2)), (a,), lambda g: (g.swapaxes(1, 2),)
    )


_register("reshape")


def reshape(a, shape):
    a = _lift(a)
    old = a.data.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


_register("concat")


def concat(tensors, axis=0):
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ValueError("concat of empty list")
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bwd)


_register("gather_rows")


def gather_rows(a, idx):
    """Select rows of a 2-D tensor by integer index (repeats allowed)."""
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError("gather_rows expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.intp)

    def bwd(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


_register("sum_all")


def sum_all(a):
    a = _lift(a)
    shape = a.data.shape
    return _result(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


_register("mean_all")


def mean_all(a):
    a = _lift(a)
    shape = a.data.shape
    n = a.data.size
    return _result(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
    )


_register("sum_axis")


def sum_axis(a, axis, keepdims=False):
    a = _lift(a)
    shape = a.data.shape

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


_register("mean_axis")


def mean_axis(a, axis, keepdims=False):
    a = _lift(a)
    shape = a.data.shape
    n = shape[axis]

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, shape).copy(),)

    return _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


_register("relu")


def relu(a):
    a = _lift(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


_register("abs_")


def abs_(a):
    """Entrywise absolute value; subgradient 0 at exactly 0."""
    a = _lift(a)
    s = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * s,))


_register("exp")


def exp(a):
    a = _lift(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


_register("log")


def log(a):
    a = _lift(a)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive entry")
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


_register("silu")


def silu(a):
    a = _lift(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def bwd(g):
        return (g * (sig * (1.0 + a.data * (1.0 - sig))),)

    return _result(out, (a,), bwd)


_register("clamp_min")


def clamp_min(a, floor):
    """max(a, floor); gradient passes only where a > floor."""
    a = _lift(a)
    mask = a.data > floor
    return _result(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# softmax family and normalization


def _softmax_data(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


_register("softmax_rows")


def softmax_rows(a):
    """Row-wise softmax of a 2-D tensor, max-subtracted for stability."""
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError("softmax_rows expects a 2-D tensor")
    if a.data.shape[1] == 0:
        raise ValueError("softmax_rows: empty row")
    p = _softmax_data(a.data)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _result(p, (a,), bwd)


_register("masked_softmax_rows")


def masked_softmax_rows(a, mask):
    """Row softmax restricted to ``mask`` (bool, const); masked-out entries
    get probability 0 and rows with no valid entry come out all-zero."""
    a = _lift(a)
    mask = np.asarray(mask, dtype=bool)
    if a.data.shape != mask.shape or a.data.ndim != 2:
        raise ValueError("masked_softmax_rows: mask must match a 2-D tensor")
    neg = np.where(mask, a.data, -np.inf)
    rowmax = neg.max(axis=1, keepdims=True)
    any_valid = mask.any(axis=1, keepdims=True)
    rowmax = np.where(any_valid, rowmax, 0.0)
    e = np.exp(np.where(mask, a.data - rowmax, -np.inf))
    e = np.where(mask, e, 0.0)
    denom = e.sum(axis=1, keepdims=True)
    p = np.where(any_valid, e / np.where(denom == 0.0, 1.0, denom), 0.0)

    def bwd(g):
        out = p * (g - (g * p).sum(axis=1, keepdims=True))
        return (np.where(mask, out, 0.0),)

    return _result(p, (a,), bwd)


_register("log_softmax_rows")


def log_softmax_rows(a):
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError("log_softmax_rows expects a 2-D tensor")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bwd(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _result(out, (a,), bwd)


_register("l2_normalize_rows")


def l2_normalize_rows(a):
    """Scale each row of a 2-D tensor to unit Euclidean norm."""
    a = _lift(a)
    if a.data.ndim != 2:
        raise ValueError("l2_normalize_rows expects a 2-D tensor")
    norm = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot normalize a zero row")
    y = a.data / norm

    def bwd(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return _result(y, (a,), bwd)


# ---------------------------------------------------------------------------
# gradient oracle


def grad_check(f, at, step=1e-5):
    """Compare the tape gradient of scalar-valued ``f`` against central
    finite differences, component by component.

    ``f`` receives a leaf tensor shaped like ``at`` and must return a
    scalar-sized tensor. Returns the worst relative error, where the
    relative error uses a denominator floored at 1 so near-zero gradients
    are compared absolutely.
    """
    base = np.asarray(at.data if isinstance(at, Tensor) else at, dtype=np.float64)

    tape = Tape()
    x = tape.leaf(base.copy())
    y = f(x)
    tape.backward(y)
    gt = x.grad if x.grad is not None else np.zeros_like(base)

    def value(arr):
        t = Tape()
        out = f(t.leaf(arr)).data
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite value during finite differencing")
        return float(out)

    flat = base.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = step
        fd[i] = (value((flat + bump).reshape(base.shape)) -
                 value((flat - bump).reshape(base.shape))) / (2.0 * step)
    fd = fd.reshape(base.shape)

    denom = np.maximum(np.maximum(np.abs(gt), np.abs(fd)), 1.0)
    return float(np.max(np.abs(gt - fd) / denom))
