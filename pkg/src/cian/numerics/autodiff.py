"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every differentiable value is a :class:`Tensor`.  Operations build a DAG of
nodes; :func:`gradient_of` walks it backwards.  Only the primitives listed in
:data:`SUPPORTED_OPS` carry a backward rule; anything else (an opaque op or a
raw numpy ufunc applied to a Tensor) raises :class:`CapabilityError`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from cian.errors import CapabilityError, DegenerateInputError, DimensionError

SUPPORTED_OPS = frozenset(
    {
        "leaf",
        "const",
        "linear",
        "softmax",
        "add",
        "mul",
        "exp",
        "tanh",
        "l2_normalize",
        "dot",
        "hinge",
        "sum",
        "take",
        "reshape",
    }
)

_TINY = np.finfo(np.float64).tiny


class Tensor:
    """An n-d float64 array that remembers how it was computed."""

    __slots__ = ("data", "op", "parents", "backward_fn", "name")

    def __init__(self, data, op="leaf", parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    # numpy must not silently unwrap a Tensor: that would cut the graph.
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        raise CapabilityError(f"numpy ufunc {ufunc.__name__!r} is not a differentiable primitive")

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise CapabilityError("division by a Tensor is not a supported primitive")
        return mul(self, 1.0 / float(other))


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, op="const")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, what: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{what}: operands of shape {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------------------
# primitives


def linear(W, b, x) -> Tensor:
    """``y = W x + b`` applied along the last axis of ``x``."""
    W, b, x = as_tensor(W), as_tensor(b), as_tensor(x)
    if W.data.ndim != 2:
        raise DimensionError(f"linear: weight W must be 2-d, got shape {W.shape}")
    m, n = W.shape
    if b.shape != (m,):
        raise DimensionError(f"linear: bias b has shape {b.shape}, expected ({m},) to match W {W.shape}")
    if x.data.ndim < 1 or x.shape[-1] != n:
        raise DimensionError(f"linear: input x has shape {x.shape}, last axis must be {n} to match W {W.shape}")
    out = x.data @ W.data.T + b.data

    def backward(g):
        g2 = g.reshape(-1, m)
        x2 = x.data.reshape(-1, n)
        return (g2.T @ x2, g2.sum(axis=0), g @ W.data)

    return Tensor(out, "linear", (W, b, x), backward)


def softmax(s) -> Tensor:
    """Numerically stable softmax over the last axis."""
    s = as_tensor(s)
    if s.data.ndim == 0 or s.shape[-1] == 0:
        raise DimensionError("softmax: input must have a non-empty last axis")
    z = s.data - s.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    # floor underflowed entries so weights stay strictly positive
    p = np.maximum(e / e.sum(axis=-1, keepdims=True), _TINY)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor(p, "softmax", (s,), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, "add", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, "mul", (a, b), backward)


def neg(a) -> Tensor:
    return mul(a, -1.0)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return Tensor(out, "exp", (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, "tanh", (a,), backward)


def l2_normalize(a) -> Tensor:
    """Scale each vector along the last axis to unit Euclidean norm."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(norm == 0.0):
        raise DegenerateInputError("l2_normalize: zero-norm vector")
    y = a.data / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return Tensor(y, "l2_normalize", (a,), backward)


def dot(a, b) -> Tensor:
    """Inner product over the last axis (batched over leading axes)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"dot: operands of shape {a.shape} and {b.shape} differ")

    def backward(g):
        g = np.asarray(g)[..., None]
        return (g * b.data, g * a.data)

    return Tensor((a.data * b.data).sum(axis=-1), "dot", (a, b), backward)


def hinge(a) -> Tensor:
    """``max(0, a)``; the subgradient at 0 is taken as 0."""
    a = as_tensor(a)
    active = a.data > 0.0

    def backward(g):
        return (g * active,)

    return Tensor(np.where(active, a.data, 0.0), "hinge", (a,), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, "sum", (a,), backward)


def mean(a) -> Tensor:
    a = as_tensor(a)
    return mul(tsum(a), 1.0 / a.data.size)


def take(a, index) -> Tensor:
    """Gather rows ``a[index]`` along axis 0 (indices may repeat)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor(a.data[index], "take", (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (np.reshape(g, a.shape),)

    return Tensor(a.data.reshape(shape), "reshape", (a,), backward)


def opaque(fn: Callable[[np.ndarray], np.ndarray], a) -> Tensor:
    """Wrap an arbitrary array function; forward works, differentiation does not."""
    a = as_tensor(a)
    name = getattr(fn, "__name__", "opaque")
    return Tensor(fn(a.data), f"opaque:{name}", (a,), None)


# ---------------------------------------------------------------------------
# reverse pass


@dataclass(frozen=True)
class GradRecord:
    name: str
    gradient: np.ndarray


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d(root)/d(node) for every node reachable from ``root``."""
    if root.data.size != 1:
        raise DimensionError(f"backward: loss must be scalar, got shape {root.shape}")
    order = _topo_order(root)
    for node in order:
        if node.op not in SUPPORTED_OPS:
            raise CapabilityError(f"primitive {node.op!r} has no gradient rule")
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or not node.parents:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if parent.op == "const":
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return grads


def gradient_of(
    loss_fn: Callable[[dict[str, Tensor]], Tensor | float],
    params: Mapping[str, np.ndarray],
) -> list[GradRecord]:
    """Exact gradients of a scalar loss with respect to every named parameter.

    ``loss_fn`` receives a dict of leaf Tensors (one per entry of ``params``)
    and returns a scalar Tensor.  A plain number is treated as a constant loss.
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64), name=k) for k, v in params.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, Tensor):
        return [GradRecord(k, np.zeros_like(t.data)) for k, t in leaves.items()]
    grads = backward(loss)
    return [GradRecord(k, grads.get(id(t), np.zeros_like(t.data))) for k, t in leaves.items()]


def value_and_grad(loss_fn, params: Mapping[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    """Like :func:`gradient_of` but also returns the loss and a name->grad dict."""
    leaves = {k: Tensor(np.array(v, dtype=np.float64), name=k) for k, v in params.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, Tensor):
        return float(loss), {k: np.zeros_like(t.data) for k, t in leaves.items()}
    grads = backward(loss)
    return loss.item(), {k: grads.get(id(t), np.zeros_like(t.data)) for k, t in leaves.items()}
