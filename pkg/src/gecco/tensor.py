"""Dense 2-D float matrices and the handful of ops the classifier needs.

A "tensor" here is a C-contiguous 2-D ``np.ndarray`` of float32 (float64 is
passed through untouched so gradient checks can run in double precision).
Every op validates shapes up front and refuses to return non-finite values.
"""
from __future__ import annotations

import contextlib
import contextvars

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_FLOAT_TYPES = (np.float32, np.float64)

_mac_counter: contextvars.ContextVar[list[int] | None] = contextvars.ContextVar(
    "mac_counter", default=None
)


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates executed by :func:`matmul` inside the block.

    Yields a one-element list whose single entry is the running total.
    """
    box = [0]
    token = _mac_counter.set(box)
    try:
        yield box
    finally:
        _mac_counter.reset(token)


def as_tensor(x, dtype=None) -> np.ndarray:
    a = np.asarray(x)
    if dtype is None:
        dtype = a.dtype if a.dtype in _FLOAT_TYPES else np.float32
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D tensor, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"tensor dimensions must be >= 1, got {a.shape}")
    return a


def _finite(a: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    return a


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    box = _mac_counter.get()
    if box is not None:
        box[0] += a.shape[0] * a.shape[1] * b.shape[1]
    return _finite(a @ b, "matmul")


def elementwise(a, f) -> np.ndarray:
    a = as_tensor(a)
    out = np.ascontiguousarray(f(a), dtype=a.dtype)
    _same_shape(a, out, "elementwise")
    return _finite(out, "elementwise")


def _relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so large |x| cannot overflow
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype, copy=False)


def relu(a) -> np.ndarray:
    return elementwise(a, _relu)


def sigmoid(a) -> np.ndarray:
    return elementwise(a, _sigmoid)


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _finite(a + b, "add")


def row_broadcast_add(a, bias) -> np.ndarray:
    a, bias = as_tensor(a), as_tensor(bias)
    if bias.shape != (1, a.shape[1]):
        raise ShapeError(f"row_broadcast_add: bias {bias.shape} does not fit {a.shape}")
    return _finite(a + bias, "row_broadcast_add")


def transpose(a) -> np.ndarray:
    return np.ascontiguousarray(as_tensor(a).T)


def column_sums(a) -> np.ndarray:
    a = as_tensor(a)
    return _finite(a.sum(axis=0, keepdims=True, dtype=a.dtype), "column_sums")


def softmax_rows(a) -> np.ndarray:
    a = as_tensor(a)
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return _finite(e / e.sum(axis=1, keepdims=True), "softmax_rows")


def maxpool_features(a, k: int) -> np.ndarray:
    """Max over disjoint windows of ``k`` consecutive columns.

    A trailing partial window is dropped, so the output has ``cols // k`` columns.
    """
    a = as_tensor(a)
    if k < 1:
        raise ShapeError(f"maxpool window must be >= 1, got {k}")
    if k > a.shape[1]:
        raise ShapeError(f"maxpool window {k} exceeds width {a.shape[1]}")
    rows, width = a.shape[0], a.shape[1] // k
    windows = a[:, : width * k].reshape(rows, width, k)
    return np.ascontiguousarray(windows.max(axis=2))


def maxpool_argmax(a: np.ndarray, k: int) -> np.ndarray:
    """Column index (into ``a``) of each pooled maximum; ties go to the first."""
    rows, width = a.shape[0], a.shape[1] // k
    windows = a[:, : width * k].reshape(rows, width, k)
    return windows.argmax(axis=2) + np.arange(width) * k
