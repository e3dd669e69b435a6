"""
Reverse-mode automatic differentiation over dense float64 arrays.

Every primitive evaluates eagerly with numpy, checks its output for
non-finite values, and, when a Tape is active and any input requires a
gradient, records a TapeNode holding the op kind, its inputs and a
vector-Jacobian product closure. `backward` walks the nodes of a tape in
reverse creation order and returns gradients for the leaf tensors.
"""

import functools
import itertools
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ..core.exceptions import ContractViolation, NumericFailure
from ..core.linalg import cofactor3, quat_to_rotmat_jacobian
from ..core.linalg import quat_to_rotmat as _rotmat

_uids = itertools.count()
_tape_stack: List[Optional["Tape"]] = []


class Tensor:
    """An immutable float64 array that may participate in a tape."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.uid = next(_uids)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operators delegate to the primitives below
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


@dataclass
class TapeNode:
    node_id: int
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Records primitive applications while used as a context manager."""

    def __init__(self):
        self.nodes: List[TapeNode] = []

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _tape_stack.pop()
        return False

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, vjp) -> TapeNode:
        node = TapeNode(len(self.nodes), op, inputs, output, vjp)
        self.nodes.append(node)
        return node


def current_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


@contextmanager
def no_tape():
    """Evaluate primitives without recording, even inside an active tape."""
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()


def backward(root: Tensor, tape: Tape) -> Dict[int, np.ndarray]:
    """
    Gradients of a scalar root with respect to every leaf it depends on.

    Returns a mapping from leaf tensor uid to gradient array. Nodes are
    processed in reverse creation order, so accumulation is deterministic.
    """
    if root.size != 1:
        raise ContractViolation(f"backward: root must be a scalar, got shape {root.shape}")

    grads: Dict[int, np.ndarray] = {root.uid: np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output.uid, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            prev = grads.get(inp.uid)
            grads[inp.uid] = gi if prev is None else prev + gi
    return grads


def grad_of(grads: Dict[int, np.ndarray], tensor: Tensor) -> np.ndarray:
    g = grads.get(tensor.uid)
    return np.zeros_like(tensor.data) if g is None else g


# Helpers


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _quiet(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(all="ignore"):
            return fn(*args, **kwargs)

    return wrapper


def _emit(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], vjp) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericFailure(op)
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")


def _axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if not keepdims and axis is not None:
        g = np.expand_dims(g, _axes(axis, len(shape)))
    return np.broadcast_to(g, shape).copy()


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _is_advanced(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


# Elementwise arithmetic


@_quiet
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _emit(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


@_quiet
def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _emit(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


@_quiet
def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _emit(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


@_quiet
def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    return _emit(
        "div",
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


@_quiet
def square(a) -> Tensor:
    a = as_tensor(a)
    return _emit("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


@_quiet
def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _emit("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


@_quiet
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


@_quiet
def log(a) -> Tensor:
    a = as_tensor(a)
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


@_quiet
def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / a.data
    return _emit("reciprocal", out, (a,), lambda g: (-g * out * out,))


@_quiet
def elu(a) -> Tensor:
    a = as_tensor(a)
    negative = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, negative)
    slope = np.where(a.data > 0, 1.0, negative + 1.0)
    return _emit("elu", out, (a,), lambda g: (g * slope,))


@_quiet
def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _emit("softplus", np.logaddexp(0.0, a.data), (a,), lambda g: (g * expit(a.data),))


@_quiet
def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _emit("softmax", out, (a,), vjp)


# Linear algebra and shape manipulation


@_quiet
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ContractViolation(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}")

    def vjp(g):
        return (
            _unbroadcast(np.matmul(g, _swap_last(b.data)), a.shape),
            _unbroadcast(np.matmul(_swap_last(a.data), g), b.shape),
        )

    return _emit("matmul", np.matmul(a.data, b.data), (a, b), vjp)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractViolation(f"reshape: cannot reshape {a.shape} into {tuple(shape)}")
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _emit(
        "sum", out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),)
    )


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size / max(np.size(out), 1)
    return _emit(
        "mean", out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,)
    )


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ContractViolation(f"concatenate: {e}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit(
        "concatenate", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis))
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ContractViolation(f"stack: {e}")
    return _emit(
        "stack",
        out,
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
    )


def getitem(a, index) -> Tensor:
    """Slicing and integer-array gathers; gathered rows scatter-add on the way back."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        raise ContractViolation("getitem: index must be an integer array or slice, not a Tensor")
    try:
        out = a.data[index]
    except IndexError as e:
        raise ContractViolation(f"getitem: {e}")
    advanced = _is_advanced(index)

    def vjp(g):
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _emit("slice", np.array(out, dtype=np.float64), (a,), vjp)


# Batched 3x3 and quaternion primitives


def det3(a) -> Tensor:
    a = as_tensor(a)
    if a.shape[-2:] != (3, 3):
        raise ContractViolation(f"det3: expected (..., 3, 3), got {a.shape}")
    cof = cofactor3(a.data)
    out = np.sum(a.data[..., 0, :] * cof[..., 0, :], axis=-1)
    return _emit("det3", out, (a,), lambda g: (g[..., None, None] * cof,))


def trace3(a) -> Tensor:
    a = as_tensor(a)
    if a.shape[-2:] != (3, 3):
        raise ContractViolation(f"trace3: expected (..., 3, 3), got {a.shape}")
    out = a.data[..., 0, 0] + a.data[..., 1, 1] + a.data[..., 2, 2]
    return _emit("trace3", out, (a,), lambda g: (g[..., None, None] * np.eye(3),))


@_quiet
def quat_normalize(q) -> Tensor:
    q = as_tensor(q)
    if q.shape[-1] != 4:
        raise ContractViolation(f"quat_normalize: expected (..., 4), got {q.shape}")
    norm = np.linalg.norm(q.data, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise NumericFailure("quat_normalize", "zero-norm quaternion")
    out = q.data / norm

    def vjp(g):
        return ((g - out * np.sum(g * out, axis=-1, keepdims=True)) / norm,)

    return _emit("quat_normalize", out, (q,), vjp)


def quat_to_rotmat(q) -> Tensor:
    """Rotation matrices of unit quaternions; normalize first with quat_normalize."""
    q = as_tensor(q)
    if q.shape[-1] != 4:
        raise ContractViolation(f"quat_to_rotmat: expected (..., 4), got {q.shape}")
    dR = quat_to_rotmat_jacobian(q.data)
    return _emit(
        "quat_to_rotmat",
        _rotmat(q.data),
        (q,),
        lambda g: (np.einsum("...ij,...ijk->...k", g, dR),),
    )
