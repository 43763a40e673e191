"""Tensor primitives.

Tensors are plain ``numpy.ndarray`` objects in float64.  The helpers below
add the few guarantees the layers rely on and that numpy does not give by
default: no implicit broadcasting beyond a scalar operand, an error on
division by an exact zero, and lowest-index tie breaking for argmax.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPE = np.float64

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
}


def tensor_create(shape, fill=0.0, name=None):
    """Build a row-major float64 tensor of ``shape``.

    ``fill`` is either a scalar or exactly ``prod(shape)`` values (any nesting).
    ``name`` is accepted for symmetry with checkpoint entries and ignored.
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ShapeError(f"negative extent in shape {shape}")
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=DTYPE)
    values = np.asarray(fill, dtype=DTYPE).ravel()
    size = int(np.prod(shape, dtype=np.int64))
    if values.size != size:
        raise ShapeError(f"{values.size} values cannot fill shape {shape} ({size} elements)")
    return values.reshape(shape).copy()


def elementwise(a, b, op):
    a = np.asarray(a, dtype=DTYPE)
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if np.isscalar(b) or np.ndim(b) == 0:
        b = DTYPE(b)
    else:
        b = np.asarray(b, dtype=DTYPE)
        if b.shape != a.shape:
            raise ShapeError(f"elementwise {op}: shapes {a.shape} and {b.shape} differ")
    if op == "div" and np.any(np.asarray(b) == 0):
        raise ZeroDivisionError("elementwise div by exact zero")
    return fn(a, b)


def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def argmax(a, axis=None):
    """Argmax with lowest-index tie breaking (numpy already returns the first hit)."""
    a = np.asarray(a)
    if a.size == 0 or (axis is not None and a.shape[axis] == 0):
        raise ShapeError("argmax over an empty extent")
    return np.argmax(a, axis=axis)


def reduce(a, axes=None, op="sum"):
    """Reduce ``a`` over ``axes`` (``None`` = all axes); reduced axes are removed."""
    a = np.asarray(a, dtype=DTYPE)
    if axes is not None:
        axes = (axes,) if np.isscalar(axes) else tuple(axes)
        for ax in axes:
            if not -a.ndim <= ax < a.ndim:
                raise ShapeError(f"axis {ax} invalid for shape {a.shape}")
    if op == "sum":
        return np.sum(a, axis=axes)
    if op == "mean":
        return np.mean(a, axis=axes)
    if op == "max":
        red = a.shape if axes is None else [a.shape[ax] for ax in axes]
        if a.size == 0 or 0 in red:
            raise ShapeError("max over an empty extent")
        return np.max(a, axis=axes)
    if op == "argmax":
        if axes is None:
            return argmax(a)
        if len(axes) != 1:
            raise ShapeError("argmax reduces over exactly one axis")
        return argmax(a, axis=axes[0])
    raise ValueError(f"unknown reduction {op!r}")
