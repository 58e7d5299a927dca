"""Dense row-major tensors.

Tensors are plain ``numpy.ndarray`` values (C order). This module only adds
the checked constructors and arithmetic the layers rely on; shape errors are
raised as :class:`~charcnn.errors.ShapeError` rather than numpy's broadcasting
behaviour.
"""

from __future__ import annotations

import math
import sys
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, SizeError

DTYPE = np.float32
DTYPE64 = np.float64

Shape = tuple[int, ...]


def check_shape(shape: Sequence[int]) -> Shape:
    dims = tuple(int(d) for d in shape)
    if not dims:
        raise ShapeError("shape must have at least one extent")
    if any(d < 1 for d in dims):
        raise ShapeError(f"every extent must be >= 1, got {dims}")
    if math.prod(dims) > sys.maxsize:
        raise SizeError(f"element count of {dims} overflows a machine word")
    return dims


def zeros(shape: Sequence[int], dtype=DTYPE) -> np.ndarray:
    return np.zeros(check_shape(shape), dtype=dtype)


def elementwise(op: Callable, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply a scalar binary ``op`` pairwise over two same-shaped tensors.

    ``op`` may be a numpy ufunc (fast path) or any python callable on scalars.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise shape mismatch: {a.shape} vs {b.shape}")
    if isinstance(op, np.ufunc):
        return op(a, b)
    flat = [op(x, y) for x, y in zip(a.ravel().tolist(), b.ravel().tolist())]
    return np.asarray(flat, dtype=np.result_type(a, b)).reshape(a.shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def reshape(t: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    t = np.asarray(t)
    dims = check_shape(shape)
    if math.prod(dims) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {dims}")
    return np.ascontiguousarray(t).reshape(dims)
