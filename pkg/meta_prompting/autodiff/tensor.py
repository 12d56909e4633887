"""
Dense float64 tensors that record the operations applied to them.

A ``Tensor`` is both the value and its graph node: results of operations on
tensors that require gradients keep references to their parents and a local
backward function. Backward functions are themselves written with tensor
operations, so running them with grad mode enabled builds a graph that can be
differentiated again (gradients of gradients).
"""

import itertools
import logging
import threading
from contextlib import contextmanager
from typing import Any, Callable, Iterator, Optional, Sequence, Union

import numpy as np

from meta_prompting.models.exceptions import (
    DimensionError,
    NonFiniteError,
    NumericDomainError,
)

logger = logging.getLogger(__name__)

BackwardFn = Callable[["Tensor", "Tensor"], Sequence[Optional["Tensor"]]]
ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]

_ids = itertools.count(1)
_local = threading.local()
_settings = {"check_finite": False}


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def _grad_mode(enabled: bool) -> Iterator[None]:
    previous = is_grad_enabled()
    _local.grad_enabled = enabled
    try:
        yield
    finally:
        _local.grad_enabled = previous


def no_grad():
    """Operations inside the block produce constants with no graph."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


def set_check_finite(enabled: bool) -> None:
    _settings["check_finite"] = bool(enabled)


def check_finite_enabled() -> bool:
    return _settings["check_finite"]


@contextmanager
def check_finite(enabled: bool = True) -> Iterator[None]:
    """Toggle the NaN/Inf check applied to every operation result."""
    previous = _settings["check_finite"]
    _settings["check_finite"] = enabled
    try:
        yield
    finally:
        _settings["check_finite"] = previous


def _frozen(data: Any) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    arr.flags.writeable = False
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "_backward", "id", "generation", "name", "op")

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = _frozen(data)
        self.requires_grad = requires_grad
        self.parents: tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.id = next(_ids)
        self.generation = 0
        self.name = name
        self.op = "leaf"

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        out.data = arr
        out.requires_grad = False
        out.parents = ()
        out._backward = None
        out.id = next(_ids)
        out.generation = 0
        out.name = None
        out.op = "leaf"
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.parents = ()
        out._backward = None
        out.id = next(_ids)
        out.generation = 0
        out.name = self.name
        out.op = "leaf"
        return out

    def leaf(self, requires_grad: bool = True) -> "Tensor":
        """A fresh leaf carrying the same value, cut from any graph."""
        out = self.detach()
        out.requires_grad = requires_grad
        return out

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key: Any) -> "Tensor":
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    out = Tensor._wrap(np.asarray(data))
    out.op = op
    if _settings["check_finite"] and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"Operation '{op}' produced non-finite values")
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward
        out.generation = 1 + max(p.generation for p in parents)
    return out


def _reduce_axes(from_shape: tuple[int, ...], to_shape: tuple[int, ...]) -> tuple[tuple[int, ...], int]:
    lead = len(from_shape) - len(to_shape)
    if lead < 0:
        raise DimensionError(f"Cannot reduce shape {from_shape} to {to_shape}")
    axes = tuple(range(lead)) + tuple(
        lead + i for i, dim in enumerate(to_shape) if dim == 1 and from_shape[lead + i] != 1
    )
    return axes, lead


def sum_to(a: ArrayLike, shape: tuple[int, ...]) -> Tensor:
    """Sum a broadcast result back down to ``shape``."""
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    axes, lead = _reduce_axes(a.shape, shape)
    data = a.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    data = data.reshape(shape)
    src_shape = a.shape
    return _make("sum_to", data, (a,), lambda g, out: (broadcast_to(g, src_shape),))


def broadcast_to(a: ArrayLike, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError as e:
        raise DimensionError(f"Cannot broadcast {a.shape} to {shape}") from e
    src_shape = a.shape
    return _make("broadcast_to", data, (a,), lambda g, out: (sum_to(g, src_shape),))


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from e


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(
        "add",
        a.data + b.data,
        (a, b),
        lambda g, out: (sum_to(g, a.shape), sum_to(g, b.shape)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g, out: (sum_to(g, a.shape), sum_to(neg(g), b.shape)),
    )


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g, out: (neg(g),))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g, out: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)),
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise NumericDomainError("div: division by zero")

    def backward(g: Tensor, out: Tensor):
        grad_a = sum_to(div(g, b), a.shape)
        grad_b = sum_to(neg(mul(g, div(out, b))), b.shape)
        return grad_a, grad_b

    return _make("div", a.data / b.data, (a, b), backward)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return _make(
        "matmul",
        a.data @ b.data,
        (a, b),
        lambda g, out: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _make(
        "transpose",
        np.transpose(a.data, axes),
        (a,),
        lambda g, out: (transpose(g, inverse),),
    )


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from e
    src_shape = a.shape
    return _make("reshape", data, (a,), lambda g, out: (reshape(g, src_shape),))


def _normalize_axis(axis: Any, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    src_shape = a.shape
    kept_shape = tuple(1 if i in axes else dim for i, dim in enumerate(src_shape))

    def backward(g: Tensor, out: Tensor):
        return (broadcast_to(reshape(g, kept_shape), src_shape),)

    return _make("sum", data, (a,), backward)


def mean(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise DimensionError("mean over an empty axis")
    return div(tsum(a, axis=axes, keepdims=keepdims), float(count))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    if not np.all(np.isfinite(data)):
        raise NumericDomainError("exp: overflow (argument too large)")
    return _make("exp", data, (a,), lambda g, out: (mul(g, out),))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericDomainError("log: argument must be strictly positive")
    return _make("log", np.log(a.data), (a,), lambda g, out: (div(g, a),))


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(
        "tanh",
        np.tanh(a.data),
        (a,),
        lambda g, out: (mul(g, sub(1.0, mul(out, out))),),
    )


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    data = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(
        "sigmoid",
        data,
        (a,),
        lambda g, out: (mul(g, mul(out, sub(1.0, out))),),
    )


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = Tensor._wrap((a.data > 0).astype(np.float64))
    return _make("relu", a.data * mask.data, (a,), lambda g, out: (mul(g, mask),))


def _freeze_key(key: Any) -> Any:
    if isinstance(key, tuple):
        return tuple(_freeze_key(k) for k in key)
    if isinstance(key, Tensor):
        return key.data.astype(np.int64)
    if isinstance(key, (list, np.ndarray)):
        return np.asarray(key)
    return key


def getitem(a: ArrayLike, key: Any) -> Tensor:
    """Basic and integer-array indexing (embedding lookups, row/column picks)."""
    a = as_tensor(a)
    key = _freeze_key(key)
    try:
        data = a.data[key]
    except IndexError as e:
        raise DimensionError(f"getitem: {e}") from e
    src_shape = a.shape
    return _make("getitem", data, (a,), lambda g, out: (scatter(g, key, src_shape),))


def scatter(values: ArrayLike, key: Any, shape: tuple[int, ...]) -> Tensor:
    """Zeros of ``shape`` with ``values`` accumulated at ``key``; adjoint of getitem."""
    values = as_tensor(values)
    key = _freeze_key(key)
    data = np.zeros(shape, dtype=np.float64)
    np.add.at(data, key, values.data)
    return _make("scatter", data, (values,), lambda g, out: (getitem(g, key),))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise DimensionError("concat needs at least one tensor")
    ndim = parts[0].ndim
    axis = axis % ndim
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from e
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g: Tensor, out: Tensor):
        grads = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * ndim
            index[axis] = slice(int(start), int(stop))
            grads.append(getitem(g, tuple(index)))
        return tuple(grads)

    return _make("concat", data, parts, backward)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    expanded = []
    for p in parts:
        shape = list(p.shape)
        shape.insert(axis % (p.ndim + 1), 1)
        expanded.append(reshape(p, shape))
    return concat(expanded, axis=axis)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor._wrap(np.zeros(tuple(shape)))


def ones_like(a: Tensor) -> Tensor:
    return Tensor._wrap(np.ones(a.shape))
