"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable quantity in the package (classifiers, recurrent nets,
Sinkhorn and MMD losses) is built from the primitives below. Each primitive
computes its forward value eagerly with numpy and records a closure that
pushes the output gradient back to its inputs. ``Tensor.backward`` orders the
recorded graph topologically and replays the closures in reverse.

Broadcasting is deliberately limited to scalar-with-tensor; the one
exception is ``add_bias``, which adds a row vector to every row of a matrix.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "NumericError",
    "ShapeError",
    "Tensor",
    "tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "add_bias",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "softplus",
    "abs_",
    "maximum",
    "sum_",
    "mean",
    "concat",
    "reshape",
    "take",
    "pairwise_sqdist",
    "pairwise_dist",
    "no_grad_copy",
    "backward",
    "finite_difference_check",
]


class NumericError(ArithmeticError):
    """Raised when a forward or backward pass produces NaN or Inf."""


class ShapeError(ValueError):
    """Raised when operand shapes violate a primitive's shape rule."""


def _check_finite(arr: np.ndarray, what: str) -> None:
    # a finite sum implies finite entries; an overflowing sum gets the full check
    if np.isfinite(np.sum(arr)):
        return
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {what}")


class Tensor:
    """Dense float64 array with a gradient slot.

    ``grad`` has the same shape as ``data`` and starts at zero. Gradients
    accumulate across calls to :meth:`backward`; call :meth:`zero_grad`
    between optimisation steps.
    """

    __slots__ = ("data", "_grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _op: str = "leaf",
    ):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, _op)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward: Callable[[np.ndarray, dict], None] | None = None
        self.op = _op
        self._grad: np.ndarray | None = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = np.array(value, dtype=np.float64).reshape(self.data.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    # hashing by identity, needed for graph traversal
    __hash__ = object.__hash__


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def no_grad_copy(t: Tensor) -> Tensor:
    """Copy of ``t`` that does not participate in gradient tracking."""
    return Tensor(t.data.copy(), requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str, bw) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out._grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.op = op
    if out.requires_grad:
        out._parents = parents
        out._backward = bw
    else:
        out._parents = ()
        out._backward = None
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0 or (t.data.size == 1 and t.data.ndim == 1)


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, target: Tensor) -> np.ndarray:
    if grad.shape == target.shape:
        return grad
    return np.full(target.shape, grad.sum())


def _accum(store: dict, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    prev = store.get(id(t))
    store[id(t)] = g if prev is None else prev + g


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)

    def bw(g, store):
        _accum(store, a, _reduce_to(g, a))
        _accum(store, b, _reduce_to(g, b))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)

    def bw(g, store):
        _accum(store, a, _reduce_to(g, a))
        _accum(store, b, _reduce_to(-g, b))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return scale(b, float(a))
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)

    def bw(g, store):
        if a.requires_grad:
            _accum(store, a, _reduce_to(g * b.data, a))
        if b.requires_grad:
            _accum(store, b, _reduce_to(g * a.data, b))

    return _make(a.data * b.data, (a, b), "mul", bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    a = _as_tensor(a)
    c = float(c)

    def bw(g, store):
        _accum(store, a, g * c)

    return _make(a.data * c, (a,), "scale", bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g, store):
        if a.requires_grad:
            _accum(store, a, g @ b.data.T)
        if b.requires_grad:
            _accum(store, b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-k vector to every row of an (n, k) matrix."""
    x, bias = _as_tensor(x), _as_tensor(bias)
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} and {bias.shape}")

    def bw(g, store):
        _accum(store, x, g)
        if bias.requires_grad:
            _accum(store, bias, g.sum(axis=0))

    return _make(x.data + bias.data, (x, bias), "add_bias", bw)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = expit(x.data)

    def bw(g, store):
        _accum(store, x, g * out * (1.0 - out))

    return _make(out, (x,), "sigmoid", bw)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def bw(g, store):
        _accum(store, x, g * (1.0 - out * out))

    return _make(out, (x,), "tanh", bw)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def bw(g, store):
        _accum(store, x, g * out)

    return _make(out, (x,), "exp", bw)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log of a non-positive value")

    def bw(g, store):
        _accum(store, x, g / x.data)

    return _make(np.log(x.data), (x,), "log", bw)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def bw(g, store):
        _accum(store, x, g * expit(x.data))

    return _make(out, (x,), "softplus", bw)


def abs_(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def bw(g, store):
        _accum(store, x, g * np.sign(x.data))

    return _make(np.abs(x.data), (x,), "abs", bw)


def maximum(x: Tensor, c: float = 0.0) -> Tensor:
    """Elementwise max(x, c) against a constant; gradient 0 where x <= c."""
    x = _as_tensor(x)
    mask = x.data > c

    def bw(g, store):
        _accum(store, x, g * mask)

    return _make(np.where(mask, x.data, c), (x,), "maximum", bw)


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if axis is not None and not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"sum: axis {axis} out of range for shape {x.shape}")

    def bw(g, store):
        if axis is None:
            _accum(store, x, np.broadcast_to(g, x.shape).copy())
        else:
            _accum(store, x, np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make(np.asarray(x.data.sum(axis=axis)), (x,), "sum", bw)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("mean of an empty tensor")
    return scale(sum_(x, axis=axis), 1.0 / count)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input list")
    ndim = ts[0].data.ndim
    for t in ts:
        if t.data.ndim != ndim or any(
            t.shape[k] != ts[0].shape[k] for k in range(ndim) if k != axis % ndim
        ):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g, store):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            _accum(store, t, piece)

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), "concat", bw)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from err

    def bw(g, store):
        _accum(store, x, g.reshape(x.shape))

    return _make(out, (x,), "reshape", bw)


def take(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing (slicing, row selection)."""
    x = _as_tensor(x)
    try:
        out = x.data[index]
    except IndexError as err:
        raise ShapeError(f"slice: invalid index for shape {x.shape}: {err}") from err
    out = np.array(out, dtype=np.float64)
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(k, (slice, int, np.integer)) or k is Ellipsis for k in parts)

    def bw(g, store):
        full = np.zeros_like(x.data)
        if basic:
            # basic indexing never repeats an element
            full[index] += g
        else:
            np.add.at(full, index, g)
        _accum(store, x, full)

    return _make(out, (x,), "slice", bw)


def pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """Matrix of squared Euclidean distances between rows of ``a`` and ``b``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_sqdist: incompatible shapes {a.shape} and {b.shape}")
    # |a|^2 + |b|^2 - 2 a.b, clipped at 0 against cancellation
    na = np.einsum("ij,ij->i", a.data, a.data)
    nb = np.einsum("ij,ij->i", b.data, b.data)
    out = np.maximum(na[:, None] + nb[None, :] - 2.0 * (a.data @ b.data.T), 0.0)

    def bw(g, store):
        if a.requires_grad:
            _accum(store, a, 2.0 * (g.sum(axis=1)[:, None] * a.data - g @ b.data))
        if b.requires_grad:
            _accum(store, b, 2.0 * (g.sum(axis=0)[:, None] * b.data - g.T @ a.data))

    return _make(out, (a, b), "pairwise_sqdist", bw)


def pairwise_dist(a: Tensor, b: Tensor) -> Tensor:
    """Matrix of Euclidean distances; the gradient at coincident points is taken as 0."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_dist: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def bw(g, store):
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(out > 0, g / out, 0.0)
        w = coef[:, :, None] * diff
        if a.requires_grad:
            _accum(store, a, w.sum(axis=1))
        if b.requires_grad:
            _accum(store, b, -w.sum(axis=0))

    return _make(out, (a, b), "pairwise_dist", bw)


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise RuntimeError("cycle detected in computation graph")
        state[key] = 1
        stack.append((node, True))
        for parent in node._parents:
            pmark = state.get(id(parent))
            if pmark == 1:
                raise RuntimeError("cycle detected in computation graph")
            if pmark is None and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    Intermediate gradients live only for the duration of the call; leaves
    with ``requires_grad`` keep theirs.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    store: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = store.pop(id(node), None)
        if g is None:
            continue
        _check_finite(g, f"backward of {node.op}")
        if node._backward is None:
            node._grad = g.copy() if node._grad is None else node._grad + g
        else:
            node._backward(g, store)


def finite_difference_check(
    f: Callable[[Tensor], Tensor], point: Tensor | np.ndarray, step: float = 1e-5
) -> float:
    """Relative gap between the reverse-mode gradient ``a`` and the
    central-difference gradient ``c``: ``|a - c| / (|a| + |c| + 1e-12)`` in
    the Euclidean norm over all coordinates.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    out = f(x)
    if out.data.size != 1:
        raise ShapeError("finite_difference_check needs a scalar-valued function")
    backward(out)
    analytic = x.grad.reshape(-1)

    flat = base.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(Tensor(base.copy())).item()
        flat[i] = orig - step
        down = f(Tensor(base.copy())).item()
        flat[i] = orig
        numeric[i] = (up - down) / (2.0 * step)
    _check_finite(numeric, "finite differences")
    if numeric.size == 0:
        return 0.0
    gap = np.linalg.norm(analytic - numeric)
    return float(gap / (np.linalg.norm(analytic) + np.linalg.norm(numeric) + 1e-12))
