"""Dense float32 tensor and the shape-level operations built on it.

Tensors are immutable: the wrapped numpy array is always a C-contiguous float32
array with the write flag cleared. Reductions accumulate in float64 and cast
the result back to float32.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from gaitstrip.modules.errors import (
    AxisError,
    ParameterError,
    RankMismatchError,
    ShapeMismatchError,
)

Shape = tuple[int, ...]

GEM_EPS = 1e-6


def validate_shape(dims: Iterable[int]) -> Shape:
    """Return dims as a Shape, rejecting empty ranks and non-positive extents."""
    shape = tuple(int(d) for d in dims)
    if not shape:
        msg = "tensor rank must be at least 1"
        raise RankMismatchError(msg)
    if any(d < 1 for d in shape):
        msg = f"every extent must be >= 1, got {shape}"
        raise ShapeMismatchError(msg)
    return shape


class Tensor:
    """Immutable N-dimensional float32 array with an explicit shape."""

    __slots__ = ("_data",)

    def __init__(self, data: ArrayLike) -> None:
        """Copy data into a read-only contiguous float32 array."""
        arr = np.array(data, dtype=np.float32, order="C", copy=True)
        validate_shape(arr.shape)
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _own(cls, arr: np.ndarray) -> Tensor:
        """Wrap a freshly computed array without copying it again."""
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        validate_shape(arr.shape)
        arr.setflags(write=False)
        out._data = arr
        return out

    @classmethod
    def zeros(cls, *shape: int) -> Tensor:
        """All-zero tensor."""
        return cls._own(np.zeros(validate_shape(shape), dtype=np.float32))

    @classmethod
    def ones(cls, *shape: int) -> Tensor:
        """All-one tensor."""
        return cls._own(np.ones(validate_shape(shape), dtype=np.float32))

    @classmethod
    def full(cls, shape: Sequence[int], value: float) -> Tensor:
        """Tensor filled with one value."""
        return cls._own(np.full(validate_shape(shape), value, dtype=np.float32))

    @property
    def shape(self) -> Shape:
        """Extents, outermost first."""
        return self._data.shape

    @property
    def rank(self) -> int:
        """Number of dimensions."""
        return self._data.ndim

    @property
    def size(self) -> int:
        """Element count."""
        return int(self._data.size)

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying float32 array."""
        return self._data

    def reshape(self, *shape: int) -> Tensor:
        """Same data under a new shape of equal element count."""
        new_shape = validate_shape(shape)
        if int(np.prod(new_shape)) != self.size:
            msg = f"cannot reshape {self.shape} into {new_shape}"
            raise ShapeMismatchError(msg)
        return Tensor._own(self._data.reshape(new_shape).copy())

    def __repr__(self) -> str:
        """Shape-only summary."""
        return f"Tensor(shape={self.shape})"

    def __len__(self) -> int:
        """Extent of the leading dimension."""
        return self.shape[0]


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    """Sum two tensors of identical shape."""
    if a.shape != b.shape:
        msg = f"cannot add tensors of shape {a.shape} and {b.shape}"
        raise ShapeMismatchError(msg)
    return Tensor._own(a.numpy() + b.numpy())


def pad_zero(x: Tensor, pad_per_dim: Sequence[tuple[int, int]]) -> Tensor:
    """Surround x with zeros; pad_per_dim holds (before, after) per dimension."""
    if len(pad_per_dim) != x.rank:
        msg = f"got {len(pad_per_dim)} pad pairs for a rank-{x.rank} tensor"
        raise RankMismatchError(msg)
    pads = [(int(before), int(after)) for before, after in pad_per_dim]
    if any(before < 0 or after < 0 for before, after in pads):
        msg = f"pads must be non-negative, got {pads}"
        raise ParameterError(msg)
    return Tensor._own(np.pad(x.numpy(), pads, mode="constant", constant_values=0.0))


def slice_region(x: Tensor, starts: Sequence[int], stops: Sequence[int]) -> Tensor:
    """Copy out the box [starts, stops) of x."""
    if len(starts) != x.rank or len(stops) != x.rank:
        msg = f"slice bounds must have {x.rank} entries"
        raise RankMismatchError(msg)
    index = tuple(slice(int(s), int(e)) for s, e in zip(starts, stops, strict=True))
    return Tensor._own(x.numpy()[index].copy())


def _check_axis(x: Tensor, axis: int) -> int:
    if not 0 <= axis < x.rank:
        msg = f"axis {axis} out of range for shape {x.shape}"
        raise AxisError(msg)
    return axis


def _collapse(arr: np.ndarray, axis: int, *, keepdims: bool) -> np.ndarray:
    # A rank-1 input reduced without keepdims still needs one extent.
    if not keepdims and arr.ndim == 1:
        return arr.reshape(1)
    if keepdims:
        return arr
    return np.squeeze(arr, axis=axis)


def reduce_max(x: Tensor, axis: int, *, keepdims: bool = False) -> Tensor:
    """Maximum along axis; the axis is dropped unless keepdims is set."""
    axis = _check_axis(x, axis)
    out = np.max(x.numpy(), axis=axis, keepdims=True)
    return Tensor._own(_collapse(out, axis, keepdims=keepdims))


def power_mean(
    x: Tensor,
    axis: int,
    p: float,
    *,
    keepdims: bool = False,
    eps: float = GEM_EPS,
) -> Tensor:
    """Generalized mean (mean(clamp(x)^p))^(1/p) along axis.

    Values are clamped to eps first. The sum is taken on values scaled by the
    per-slice maximum, so large p cannot overflow and constant slices map to
    themselves exactly.
    """
    axis = _check_axis(x, axis)
    if not p >= 1.0:
        msg = f"power mean exponent must be >= 1, got {p}"
        raise ParameterError(msg)
    clamped = np.maximum(x.numpy().astype(np.float64), eps)
    peak = np.max(clamped, axis=axis, keepdims=True)
    ratio = np.mean((clamped / peak) ** p, axis=axis, keepdims=True)
    out = peak * ratio ** (1.0 / p)
    return Tensor._own(_collapse(out, axis, keepdims=keepdims))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Join tensors along an existing axis."""
    if not tensors:
        msg = "nothing to concatenate"
        raise ShapeMismatchError(msg)
    first = tensors[0]
    axis = _check_axis(first, axis)
    for t in tensors[1:]:
        other = tuple(d for i, d in enumerate(t.shape) if i != axis)
        mine = tuple(d for i, d in enumerate(first.shape) if i != axis)
        if t.rank != first.rank or other != mine:
            msg = f"cannot concatenate {first.shape} with {t.shape} on axis {axis}"
            raise ShapeMismatchError(msg)
    return Tensor._own(np.concatenate([t.numpy() for t in tensors], axis=axis))
