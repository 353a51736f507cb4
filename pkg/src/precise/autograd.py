"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every operation that touches a tensor requiring gradients is stamped with a
sequence number when it runs. ``backward`` gathers the operations reachable
from the loss and replays them in descending sequence order, which is exactly
the reverse of execution order.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels

DIST_EPS = 1e-12

_SEQ = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf from finite inputs."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by '{op}'")
        self.op = op


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, explanation)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "kink_margin", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True) if dtype is not None else np.array(data, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.kink_margin = np.inf
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._seq = -1

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        backward(self, grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.kink_margin = np.inf
    out._seq = -1
    out._parents = ()
    out._backward = None
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._seq = next(_SEQ)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---- linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return g @ B.T, A.T @ g

    return _make(A @ B, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,), "transpose")


# ---- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "mul")
    A, B = a.data, b.data

    def bw(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _make(A * B, (a, b), bw, "mul")


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * a.dtype.type(c), (a,), lambda g: (g * c,), "scalar-mul")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    out = _make(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,), "relu")
    out.kink_margin = float(np.abs(a.data).min())
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype)
    return _make(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor, floor: Optional[float] = None) -> Tensor:
    """Natural log; with ``floor`` computes log(max(a, floor)) and blocks
    gradient where the floor is active."""
    x = a.data
    if floor is not None:
        active = x > floor
        clipped = np.where(active, x, x.dtype.type(floor))
    else:
        active = np.ones(x.shape, dtype=bool)
        clipped = x
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(clipped)
    return _make(out, (a,), lambda g: (np.where(active, g / clipped, 0).astype(x.dtype),), "log")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar-mul": scalar_mul,
    "relu": relu,
    "sigmoid": sigmoid,
}


def elementwise(tag: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by tag: add, sub, mul, scalar-mul (``b`` is a number), relu, sigmoid."""
    try:
        fn = _ELEMENTWISE[tag]
    except KeyError:
        raise ValueError(f"unknown elementwise op '{tag}'") from None
    if tag in ("relu", "sigmoid"):
        return fn(a)
    if b is None:
        raise ValueError(f"'{tag}' needs a second operand")
    return fn(a, b)


# ---- reductions -----------------------------------------------------------

def _check_axis(a: Tensor, axis):
    if axis is None:
        return None
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise ValueError(f"invalid axis {axis} for shape {a.shape}")
    return axis % nd


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    axis = _check_axis(a, axis)
    shape = a.shape

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(a.dtype, copy=True),)

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), bw, "sum")


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    axis = _check_axis(a, axis)
    n = a.size if axis is None else a.shape[axis]
    return scalar_mul(sum(a, axis), 1.0 / n)


def min(a: Tensor, axis: Optional[int] = None, mask=None) -> Tensor:  # noqa: A001
    """Minimum over ``axis`` (all elements when None), optionally restricted
    to entries where ``mask`` is true. Gradient goes to the argmin only;
    ties resolve to the lowest index."""
    axis = _check_axis(a, axis)
    x = a.data
    m = np.ones(x.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if axis is None:
        x2, m2, ax = x.reshape(1, -1), m.reshape(1, -1), 1
    else:
        x2 = np.moveaxis(x, axis, -1)
        m2 = np.moveaxis(m, axis, -1)
        lead = x2.shape[:-1]
        x2 = x2.reshape(-1, x2.shape[-1])
        m2 = m2.reshape(-1, m2.shape[-1])
        ax = 1
    if x2.shape[ax] == 0:
        raise ValueError("min over an empty extent")
    vals, idx = kernels.masked_min(x2, m2, ax)
    vals = vals.astype(x.dtype, copy=False)
    out_shape = () if axis is None else lead

    def bw(g):
        g2 = np.zeros(x2.shape, dtype=x.dtype)
        g2[np.arange(x2.shape[0]), idx] = np.asarray(g).reshape(-1)
        if axis is None:
            return (g2.reshape(x.shape),)
        g2 = g2.reshape(lead + (x.shape[axis],))
        return (np.moveaxis(g2, -1, axis),)

    out = _make(vals.reshape(out_shape), (a,), bw, "min")
    # gap between best and runner-up admissible entry; a tie makes min non-smooth
    if x2.shape[ax] > 1:
        rest = np.where(m2, x2, np.inf)
        rest[np.arange(x2.shape[0]), idx] = np.inf
        gaps = rest.min(axis=1) - vals
        out.kink_margin = float(gaps.min())
    return out


def reduce(tag: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    if tag == "sum":
        return sum(a, axis)
    if tag == "mean":
        return mean(a, axis)
    if tag == "min":
        return min(a, axis)
    raise ValueError(f"unknown reduction '{tag}'")


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Select entries along ``axis`` by integer index."""
    axis = _check_axis(a, axis)
    idx = np.asarray(indices, dtype=np.int64)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, (slice(None),) * axis + (idx,), g)
        return (full,)

    return _make(np.take(a.data, idx, axis=axis), (a,), bw, "take")


# ---- model-specific -------------------------------------------------------

def euclidean_distance_rows(a: Tensor, b: Tensor) -> Tensor:
    """out[i, j] = sqrt(sum_t (a[i, t] - b[j, t])**2 + 1e-12)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature extent mismatch: {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    dist = kernels.pairwise_distances(A, B, DIST_EPS).astype(np.result_type(A, B), copy=False)

    def bw(g):
        return kernels.pairwise_distances_backward(A, B, dist, g)

    return _make(dist, (a, b), bw, "euclidean_distance_rows")


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 2 or a.shape[1] < 1:
        raise ShapeError("log_softmax expects a batch x N tensor")
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


# ---- backward -------------------------------------------------------------

@dataclass
class Tape:
    """Operations reachable from an output, in execution order."""

    nodes: list

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen, stack, nodes = set(), [out], []
        while stack:
            t = stack.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            if t._backward is not None:
                nodes.append(t)
                stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def ops(self) -> list:
        return [t.op for t in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor
    with ``requires_grad``. Gradients add onto any existing ``grad``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape.from_output(loss)
    seed = np.ones(loss.shape, dtype=loss.dtype) if grad is None else np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    pending = {id(loss): seed}
    touched = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = pending.get(id(node))
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype).reshape(parent.shape)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
                touched[key] = parent
    for key, t in touched.items():
        g = pending[key]
        t.grad = g.copy() if t.grad is None else t.grad + g
