"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: every value is a numpy float64 array
wrapped in a :class:`Tensor`, and every differentiable operation records a
node holding vector-Jacobian closures for its inputs.  Nodes carry a global
creation counter, so creation order is a topological order of the graph and
``backward`` can replay it in reverse deterministically (bit-identical
gradients for identical inputs).

Conventions baked in here and relied on elsewhere:

* ``-inf`` is representable and ``exp(-inf) == 0``; ``log(0)`` is the only
  operation allowed to produce ``-inf`` and softmax is its only consumer.
* relu and floor-style kinks use the left-derivative convention (gradient 0
  at the kink; interpolation indices are treated as constants).
* softmax rows that are entirely ``-inf`` produce an all-zero row instead
  of NaN; this is what lets log-probability attention biases switch a
  branch off completely.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "backward",
    "finite_difference",
    "as_tensor",
    "constant",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""


_COUNTER = itertools.count()

# When a Tape is active, freshly recorded nodes register here so the tape
# can sever them in clear(); gradients themselves never consult this list.
_ACTIVE_TAPES: list["Tape"] = []

_GRAD_ENABLED = True


class no_grad:
    """Context that skips recording entirely (pure-evaluation forwards)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class _Node:
    __slots__ = ("op", "inputs", "vjps", "order", "cleared")

    def __init__(self, op: str, inputs: tuple["Tensor", ...], vjps: tuple):
        self.op = op
        self.inputs = inputs
        self.vjps = vjps
        self.order = next(_COUNTER)
        self.cleared = False


class Tensor:
    """A dense float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: _Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; everything routes through the module-level primitives.
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

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Optional recording scope: collects nodes so they can be dropped in bulk.

    Exiting the scope clears the tape, which severs the recorded graph and
    invalidates gradients through it (the attack/training loops rely on this
    to keep memory flat).  Tensors created outside any tape still form a
    backward graph; the tape is bookkeeping, not a requirement.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.pop()
        self.clear()
        return False

    def clear(self) -> None:
        for node in self.nodes:
            node.cleared = True
            node.inputs = ()
            node.vjps = ()
        self.nodes.clear()


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def constant(x) -> Tensor:
    return as_tensor(x)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def _record(op: str, out: Tensor, inputs: tuple[Tensor, ...], vjps: tuple) -> Tensor:
    if _GRAD_ENABLED and any(_tracked(t) for t in inputs):
        node = _Node(op, inputs, vjps)
        out.node = node
        out.requires_grad = True
        if _ACTIVE_TAPES:
            _ACTIVE_TAPES[-1].nodes.append(node)
    return out


def _shape_check(op: str, ok: bool, *shapes):
    if not ok:
        raise ShapeError(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcastable(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    for x, y in zip(reversed(a), reversed(b)):
        if x != y and x != 1 and y != 1:
            return False
    return True


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _shape_check("add", _broadcastable(a.shape, b.shape), a.shape, b.shape)
    out = Tensor(a.data + b.data)
    return _record(
        "add",
        out,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _shape_check("sub", _broadcastable(a.shape, b.shape), a.shape, b.shape)
    out = Tensor(a.data - b.data)
    return _record(
        "sub",
        out,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _shape_check("mul", _broadcastable(a.shape, b.shape), a.shape, b.shape)
    out = Tensor(a.data * b.data)
    return _record(
        "mul",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.shape),
            lambda g: _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _shape_check("div", _broadcastable(a.shape, b.shape), a.shape, b.shape)
    out = Tensor(a.data / b.data)
    return _record(
        "div",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.data, a.shape),
            lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record("neg", out, (a,), (lambda g: -g,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _shape_check(
        "matmul",
        a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0],
        a.shape,
        b.shape,
    )
    out = Tensor(a.data @ b.data)
    return _record(
        "matmul",
        out,
        (a, b),
        (lambda g: g @ b.data.T, lambda g: a.data.T @ g),
    )


def bmm(a, b) -> Tensor:
    """Batched matmul over leading axis: (B,n,k) @ (B,k,m) -> (B,n,m)."""
    a, b = as_tensor(a), as_tensor(b)
    _shape_check(
        "bmm",
        a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0] and a.shape[2] == b.shape[1],
        a.shape,
        b.shape,
    )
    out = Tensor(a.data @ b.data)
    return _record(
        "bmm",
        out,
        (a, b),
        (
            lambda g: g @ b.data.transpose(0, 2, 1),
            lambda g: a.data.transpose(0, 2, 1) @ g,
        ),
    )


def transpose(a) -> Tensor:
    """Swap the last two axes (plain transpose for 2-D)."""
    a = as_tensor(a)
    _shape_check("transpose", a.ndim >= 2, a.shape)
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    out = Tensor(a.data.transpose(axes))
    return _record("transpose", out, (a,), (lambda g: g.transpose(axes),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))
    return _record("reshape", out, (a,), (lambda g: g.reshape(a.shape),))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    _shape_check("concat", len(ts) > 0)
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]

        return vjp

    return _record("concat", out, tuple(ts), tuple(make_vjp(i) for i in range(len(ts))))


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.shape)

    return _record("sum", out, (a,), (vjp,))


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    denom = a.size if axis is None else a.shape[axis]

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / denom, a.shape)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg / denom, a.shape)

    return _record("mean", out, (a,), (vjp,))


def prod_lastdim(a) -> Tensor:
    """Product along the last axis, with a backward that is exact at zeros.

    grad wrt x_j is prod_{k != j} x_k: rows with one zero route all gradient
    to that entry, rows with two or more zeros get zero gradient everywhere.
    """
    a = as_tensor(a)
    x = a.data
    out = Tensor(x.prod(axis=-1))

    def vjp(g):
        zeros = x == 0.0
        nzero = zeros.sum(axis=-1, keepdims=True)
        xs = np.where(zeros, 1.0, x)
        prod_nz = xs.prod(axis=-1, keepdims=True)
        # generic entry: product of the other coordinates
        part = np.where(
            nzero == 0,
            prod_nz / xs,
            np.where(nzero == 1, np.where(zeros, prod_nz, 0.0), 0.0),
        )
        return np.expand_dims(g, -1) * part

    return _record("prod_lastdim", out, (a,), (vjp,))


# ---------------------------------------------------------------------------
# nonlinearities


def texp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y)
    return _record("exp", out, (a,), (lambda g: g * y,))


def tlog(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise ValueError("log: negative input")
    with np.errstate(divide="ignore"):
        out = Tensor(np.log(a.data))

    def vjp(g):
        # skip coordinates with zero upstream gradient so log(0) = -inf does
        # not poison the chain (0 * inf); a live gradient at x == 0 still
        # yields inf and is caught by the caller's finiteness check.
        res = np.zeros_like(g)
        live = g != 0.0
        with np.errstate(divide="ignore"):
            np.divide(g, a.data, out=res, where=live)
        return res

    return _record("log", out, (a,), (vjp,))


def ttanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record("tanh", out, (a,), (lambda g: g * (1.0 - y * y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    return _record("relu", out, (a,), (lambda g: g * (a.data > 0.0),))


def rsqrt_safe(a) -> Tensor:
    """x -> x**-0.5 where x > 0, else 0 (degree-0 Laplacian convention)."""
    a = as_tensor(a)
    pos = a.data > 0.0
    x = np.where(pos, a.data, 1.0)
    y = np.where(pos, 1.0 / np.sqrt(x), 0.0)
    out = Tensor(y)
    return _record(
        "rsqrt_safe",
        out,
        (a,),
        (lambda g: np.where(pos, -0.5 * g * y / x, 0.0),),
    )


def softmax(a) -> Tensor:
    """Softmax along the last axis; rows of all ``-inf`` give all zeros."""
    a = as_tensor(a)
    x = a.data
    hi = np.max(x, axis=-1, keepdims=True)
    # a finite shift keeps exp(-inf - shift) = 0 without producing NaN
    shift = np.where(np.isfinite(hi), hi, 0.0)
    e = np.exp(x - shift)
    s = e.sum(axis=-1, keepdims=True)
    y = np.divide(e, s, out=np.zeros_like(e), where=s > 0.0)
    out = Tensor(y)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return y * (g - inner)

    return _record("softmax", out, (a,), (vjp,))


# ---------------------------------------------------------------------------
# indexing / structural ops


def gather_rows(a, idx) -> Tensor:
    """Select rows of a 2-D tensor: out[k] = a[idx[k]]."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    _shape_check("gather_rows", a.ndim == 2, a.shape)
    out = Tensor(a.data[idx])

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return ga

    return _record("gather_rows", out, (a,), (vjp,))


def take_pairs(a, rows, cols) -> Tensor:
    """Gather a vector of matrix entries: out[k] = a[rows[k], cols[k]]."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    _shape_check("take_pairs", a.ndim == 2, a.shape)
    out = Tensor(a.data[rows, cols])

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, cols), g)
        return ga

    return _record("take_pairs", out, (a,), (vjp,))


def scatter_pairs(values, shape: tuple[int, int], rows, cols) -> Tensor:
    """Dense matrix with values[k] placed at (rows[k], cols[k]), zeros elsewhere."""
    values = as_tensor(values)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    _shape_check("scatter_pairs", values.ndim == 1 and len(rows) == values.size, values.shape)
    data = np.zeros(shape, dtype=np.float64)
    np.add.at(data, (rows, cols), values.data)
    out = Tensor(data)
    return _record("scatter_pairs", out, (values,), (lambda g: g[rows, cols],))


def submatrix(a, idx) -> Tensor:
    """Symmetric row/column selection of a square matrix."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    _shape_check("submatrix", a.ndim == 2 and a.shape[0] == a.shape[1], a.shape)
    out = Tensor(a.data[np.ix_(idx, idx)])

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[np.ix_(idx, idx)] = g
        return ga

    return _record("submatrix", out, (a,), (vjp,))


def where(mask, a, b) -> Tensor:
    """Elementwise select by a constant boolean mask (no gradient to mask)."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, a.data, b.data))
    return _record(
        "where",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(np.where(mask, g, 0.0), a.shape),
            lambda g: _unbroadcast(np.where(mask, 0.0, g), b.shape),
        ),
    )


def masked_fill(a, mask, value: float) -> Tensor:
    """Set entries where mask is True to a constant (e.g. -inf attention mask)."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, value, a.data))
    return _record("masked_fill", out, (a,), (lambda g: np.where(mask, 0.0, g),))


def stop_gradient(a) -> Tensor:
    """Identity in the forward pass; blocks the backward pass entirely."""
    a = as_tensor(a)
    return Tensor(a.data)


def outer_add(a, b) -> Tensor:
    """out[i, j, :] = a[i, :] + b[j, :] for two (n, d) / (m, d) inputs."""
    a, b = as_tensor(a), as_tensor(b)
    _shape_check(
        "outer_add",
        a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[1],
        a.shape,
        b.shape,
    )
    out = Tensor(a.data[:, None, :] + b.data[None, :, :])
    return _record(
        "outer_add",
        out,
        (a, b),
        (lambda g: g.sum(axis=1), lambda g: g.sum(axis=0)),
    )


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse-mode sweep from a scalar loss.

    Returns a map from every reachable ``requires_grad`` leaf to its
    gradient; leaves passed around but not reachable are simply absent (the
    caller treats missing entries as zero).
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")

    # Collect the reachable subgraph; creation order is topological.
    seen: set[int] = set()
    tensors: list[Tensor] = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        tensors.append(t)
        if t.node is not None:
            if t.node.cleared:
                raise RuntimeError("backward: tape was cleared; gradients are invalid")
            stack.extend(t.node.inputs)

    tensors.sort(key=lambda t: -1 if t.node is None else t.node.order)

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    owned: set[int] = set()  # accumulators we allocated and may write in place
    leaf_grads: dict[Tensor, Tensor] = {}
    for t in reversed(tensors):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if t.requires_grad:
                leaf_grads[t] = Tensor(np.array(g, dtype=np.float64).reshape(t.shape))
            continue
        for inp, vjp in zip(t.node.inputs, t.node.vjps):
            if not _tracked(inp):
                continue
            gi = vjp(g)
            acc = grads.get(id(inp))
            if acc is None:
                grads[id(inp)] = np.asarray(gi, dtype=np.float64)
            elif id(inp) in owned:
                np.add(acc, gi, out=acc)
            else:
                grads[id(inp)] = acc + gi
                owned.add(id(inp))
    return leaf_grads


def grad_wrt(loss: Tensor, leaf: Tensor) -> np.ndarray:
    """Gradient array for one leaf (zeros if the leaf is unreachable)."""
    gmap = backward(loss)
    g = gmap.get(leaf)
    return np.zeros(leaf.shape) if g is None else g.data


# ---------------------------------------------------------------------------
# finite differences (independent oracle used throughout the test suite)


def finite_difference(
    loss_fn: Callable[[np.ndarray], float],
    point: np.ndarray,
    epsilon: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function."""
    if epsilon <= 0:
        raise ValueError("finite_difference: epsilon must be positive")
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = loss_fn(point)
        flat[i] = orig - epsilon
        lo = loss_fn(point)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * epsilon)
    return grad
