"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active ``Tape`` whenever one of
their inputs requires a gradient. Tensors are immutable: every operation
returns a new value and the underlying arrays are marked read-only.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Sequence, Union

import numpy as np
from scipy import special

from radar.core.validation import ValidationError


class ShapeError(ValidationError):
    """Raised when operand dimensions do not line up."""

    pass


class NumericError(ArithmeticError):
    """Raised when an operation or gradient produces NaN or infinity."""

    pass


Operand = Union["Tensor", float, int, np.ndarray]
BackwardFn = Callable[[np.ndarray], Sequence[Union[np.ndarray, None]]]

_handles = itertools.count(1)
_local = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def _ensure_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{op} produced a non-finite value")


class Tensor:
    """Immutable n-dimensional array of float64 values."""

    __slots__ = ("data", "requires_grad", "handle")
    __array_priority__ = 100.0

    def __init__(self, data: object, requires_grad: bool = False) -> None:
        arr = np.array(data, dtype=np.float64)
        _ensure_finite(arr, "tensor construction")
        arr.flags.writeable = False
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.handle = next(_handles)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> Tensor:
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out.data = arr
        out.requires_grad = requires_grad
        out.handle = next(_handles)
        return out

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def __len__(self) -> int:
        return self.shape[0]

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return the (read-only) backing array."""
        return self.data

    def detach(self) -> Tensor:
        return Tensor._wrap(self.data, requires_grad=False)

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Operand) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Operand) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Operand) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Operand) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index: np.ndarray | Sequence[int] | int) -> Tensor:
        return gather(self, np.asarray(index, dtype=np.int64))

    def sum(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape)


def parameter(data: object) -> Tensor:
    """Create a leaf tensor that receives gradients."""
    return Tensor(data, requires_grad=True)


def constant(data: object) -> Tensor:
    """Create a tensor that never receives gradients."""
    if isinstance(data, Tensor):
        return data.detach()
    return Tensor(data)


def as_tensor(value: Operand) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass(slots=True)
class _Node:
    output: int
    parents: tuple[Tensor, ...]
    backward: BackwardFn
    op: str


class GradientMap(Mapping[int, Tensor]):
    """Gradients of a scalar loss keyed by leaf tensor handle."""

    def __init__(self, grads: dict[int, np.ndarray]) -> None:
        self._grads = grads

    def __getitem__(self, key: Tensor | int) -> Tensor:  # type: ignore[override]
        handle = key.handle if isinstance(key, Tensor) else key
        return Tensor._wrap(self._grads[handle])

    def __iter__(self) -> Iterator[int]:
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)

    def array_for(self, tensor: Tensor) -> np.ndarray:
        """Gradient array for ``tensor``; zeros when the loss does not depend on it."""
        grad = self._grads.get(tensor.handle)
        if grad is None:
            return np.zeros(tensor.shape, dtype=np.float64)
        return grad


class Tape:
    """
    Ordered record of primitive operations for one forward pass.

    Use as a context manager; operations executed inside the block whose
    inputs require gradients are recorded in topological order. A tape
    supports exactly one backward pass.
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._outputs: set[int] = set()
        self._consumed = False

    def __enter__(self) -> Tape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(
        self, output: Tensor, parents: tuple[Tensor, ...], backward: BackwardFn, op: str
    ) -> None:
        if self._consumed:
            raise ValidationError("cannot record on a tape that was already consumed")
        self._nodes.append(_Node(output.handle, parents, backward, op))
        self._outputs.add(output.handle)

    def backward(self, loss: Tensor) -> GradientMap:
        """Return d(loss)/d(leaf) for every gradient-requiring leaf on the tape."""
        if self._consumed:
            raise ValidationError("tape has already been consumed by a backward pass")
        if loss.size != 1:
            raise ValidationError(
                f"backward needs a scalar loss, got shape {loss.shape}"
            )
        if not loss.requires_grad:
            raise ValidationError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {loss.handle: np.ones(loss.shape)}
        for node in reversed(self._nodes):
            upstream = grads.pop(node.output, None)
            if upstream is None:
                continue
            for parent, grad in zip(node.parents, node.backward(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                grad = _unbroadcast(np.asarray(grad, dtype=np.float64), parent.shape)
                _ensure_finite(grad, f"gradient of {node.op}")
                previous = grads.get(parent.handle)
                grads[parent.handle] = grad if previous is None else previous + grad

        self._consumed = True
        self._nodes.clear()
        self._outputs.clear()
        return GradientMap(grads)


def backward(loss: Tensor, tape: Tape) -> GradientMap:
    return tape.backward(loss)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def apply_op(
    out: np.ndarray, parents: tuple[Tensor, ...], backward_fn: BackwardFn, op: str
) -> Tensor:
    out = np.asarray(out, dtype=np.float64)
    _ensure_finite(out, op)
    needs_grad = any(p.requires_grad for p in parents)
    result = Tensor._wrap(out, requires_grad=needs_grad)
    if needs_grad:
        stack = _tape_stack()
        if stack:
            stack[-1].record(result, parents, backward_fn, op)
    return result


# Elementwise arithmetic ---------------------------------------------------


def add(a: Operand, b: Operand) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    return apply_op(x.data + y.data, (x, y), lambda g: (g, g), "add")


def sub(a: Operand, b: Operand) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    return apply_op(x.data - y.data, (x, y), lambda g: (g, -g), "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    return apply_op(
        x.data * y.data, (x, y), lambda g: (g * y.data, g * x.data), "mul"
    )


def div(a: Operand, b: Operand) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x.data / y.data
    return apply_op(
        out,
        (x, y),
        lambda g: (g / y.data, -g * x.data / (y.data * y.data)),
        "div",
    )


def neg(a: Operand) -> Tensor:
    x = as_tensor(a)
    return apply_op(-x.data, (x,), lambda g: (-g,), "neg")


def square(a: Operand) -> Tensor:
    x = as_tensor(a)
    return apply_op(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,), "square")


def power(a: Operand, exponent: float) -> Tensor:
    x = as_tensor(a)
    with np.errstate(all="ignore"):
        out = np.power(x.data, exponent)
    return apply_op(
        out,
        (x,),
        lambda g: (g * exponent * np.power(x.data, exponent - 1.0),),
        "power",
    )


def sqrt(a: Operand) -> Tensor:
    x = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)
    with np.errstate(divide="ignore"):
        return apply_op(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def exp(a: Operand) -> Tensor:
    x = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return apply_op(out, (x,), lambda g: (g * out,), "exp")


def log(a: Operand) -> Tensor:
    x = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return apply_op(out, (x,), lambda g: (g / x.data,), "log")


def sigmoid(a: Operand) -> Tensor:
    x = as_tensor(a)
    out = special.expit(x.data)
    return apply_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a: Operand) -> Tensor:
    x = as_tensor(a)
    out = special.log_expit(x.data)
    return apply_op(out, (x,), lambda g: (g * special.expit(-x.data),), "log_sigmoid")


def softplus(a: Operand) -> Tensor:
    x = as_tensor(a)
    out = np.logaddexp(0.0, x.data)
    return apply_op(out, (x,), lambda g: (g * special.expit(x.data),), "softplus")


def tanh(a: Operand) -> Tensor:
    x = as_tensor(a)
    out = np.tanh(x.data)
    return apply_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Operand) -> Tensor:
    x = as_tensor(a)
    return apply_op(
        np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0.0),), "relu"
    )


def clip(a: Operand, low: float, high: float) -> Tensor:
    """Clamp into [low, high]; the gradient is zero where clamping is active."""
    x = as_tensor(a)
    inside = (x.data > low) & (x.data < high)
    return apply_op(np.clip(x.data, low, high), (x,), lambda g: (g * inside,), "clip")


# Linear algebra and reductions --------------------------------------------


def matmul(a: Operand, b: Operand) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {x.shape} and {y.shape}")
    if x.shape[1] != y.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {x.shape} @ {y.shape}")
    return apply_op(
        x.data @ y.data, (x, y), lambda g: (g @ y.data.T, x.data.T @ g), "matmul"
    )


def transpose(a: Operand) -> Tensor:
    x = as_tensor(a)
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {x.shape}")
    return apply_op(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def reshape(a: Operand, shape: Sequence[int]) -> Tensor:
    x = as_tensor(a)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from exc
    return apply_op(out.copy(), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def reduce_sum(a: Operand, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(a)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def _back(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return apply_op(out, (x,), _back, "sum")


def reduce_mean(a: Operand, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(a)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("mean over an empty axis")
    return div(reduce_sum(x, axis=axis, keepdims=keepdims), float(count))


def logsumexp(a: Operand, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Log-sum-exp shifted by the maximum along ``axis`` so it cannot overflow."""
    x = as_tensor(a)
    peak = x.data.max(axis=axis, keepdims=True)
    shifted = np.exp(x.data - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = peak + np.log(total)
    weights = shifted / total
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def _back(g: np.ndarray) -> tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return apply_op(out, (x,), _back, "logsumexp")


def gather(a: Operand, index: np.ndarray) -> Tensor:
    """Select rows (axis 0) by integer index; repeated indices accumulate gradients."""
    x = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < -x.shape[0] or idx.max() >= x.shape[0]):
        raise ShapeError(f"gather index out of range for {x.shape[0]} rows")

    def _back(g: np.ndarray) -> tuple[np.ndarray]:
        acc = np.zeros(x.shape, dtype=np.float64)
        np.add.at(acc, idx, g)
        return (acc,)

    return apply_op(x.data[idx], (x,), _back, "gather")


def concat(tensors: Sequence[Operand], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat shape mismatch: {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def _back(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, bounds, axis=axis)

    return apply_op(out, parts, _back, "concat")


# Composites ---------------------------------------------------------------


def row_dot(a: Operand, b: Operand) -> Tensor:
    """Row-wise inner products of two equally shaped matrices."""
    return reduce_sum(mul(a, b), axis=1)


def normalize_rows(a: Operand, floor: float = 1e-12) -> Tensor:
    """Scale rows to unit L2 norm; norms below ``floor`` are floored."""
    squared = reduce_sum(square(a), axis=1, keepdims=True)
    return div(a, sqrt(clip(squared, floor * floor, np.inf)))


def l2_penalty(tensors: Iterable[Tensor]) -> Tensor:
    """Sum of squared Frobenius norms."""
    total: Tensor = Tensor(0.0)
    for t in tensors:
        total = add(total, reduce_sum(square(t)))
    return total
