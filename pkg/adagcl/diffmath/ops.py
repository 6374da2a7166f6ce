"""
Differentiable operations over Values.

Every function computes the forward buffer eagerly and, when any input
requires a gradient and recording is enabled, registers a closure that
pushes the output gradient to the inputs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from adagcl.diffmath.sparse import SparseMatrix
from adagcl.diffmath.value import Value, as_value, make_result
from adagcl.exceptions import DomainError, ShapeError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Value, b: Value, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


def _scatter_rows(grad: np.ndarray, index: np.ndarray, rows: int) -> np.ndarray:
    """Sum rows of ``grad`` into a ``rows``-row buffer at positions ``index``."""
    selector = sp.csr_matrix(
        (np.ones(index.size, dtype=grad.dtype), (index, np.arange(index.size))),
        shape=(rows, index.size),
    )
    return np.asarray(selector @ grad.reshape(index.size, -1), dtype=grad.dtype).reshape(
        (rows,) + grad.shape[1:]
    )


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b, "add")

    def backward(grad):
        a.accumulate(_unbroadcast(grad, a.shape))
        b.accumulate(_unbroadcast(grad, b.shape))

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b, "sub")

    def backward(grad):
        a.accumulate(_unbroadcast(grad, a.shape))
        b.accumulate(_unbroadcast(-grad, b.shape))

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b, "mul")

    def backward(grad):
        a.accumulate(_unbroadcast(grad * b.data, a.shape))
        b.accumulate(_unbroadcast(grad * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(grad):
        a.accumulate(grad @ b.data.T)
        b.accumulate(a.data.T @ grad)

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Value) -> Value:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")

    def backward(grad):
        a.accumulate(grad.T)

    return make_result(a.data.T, (a,), backward, "transpose")


def reshape(a: Value, shape: tuple) -> Value:
    original = a.shape

    def backward(grad):
        a.accumulate(grad.reshape(original))

    return make_result(a.data.reshape(shape), (a,), backward, "reshape")


def spmm(matrix: SparseMatrix, x: Value) -> Value:
    """Constant sparse matrix times a dense Value."""
    x = as_value(x)
    if x.data.ndim != 2:
        raise ShapeError(f"spmm expects a dense matrix operand, got shape {x.shape}")

    def backward(grad):
        x.accumulate(matrix.T.dot(grad))

    return make_result(matrix.dot(x.data), (x,), backward, "spmm")


def edge_spmm(targets: np.ndarray, sources: np.ndarray, weights: Value, x: Value, rows: int) -> Value:
    """
    Weighted message passing with differentiable edge weights.

    out[targets[e]] += weights[e] * x[sources[e]]

    Args:
        targets: Destination row per edge
        sources: Source row of ``x`` per edge
        weights: Value of shape (E,)
        x: Value of shape (N, d)
        rows: Number of output rows

    Returns:
        Value of shape (rows, d)
    """
    weights, x = as_value(weights), as_value(x)
    if weights.shape != (targets.size,) or sources.size != targets.size:
        raise ShapeError(f"edge_spmm: {targets.size} edges but weights of shape {weights.shape}")
    matrix = sp.csr_matrix((weights.data.astype(np.float64), (targets, sources)), shape=(rows, x.shape[0]))
    out = np.asarray(matrix @ x.data, dtype=x.data.dtype)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(np.asarray(matrix.T @ grad, dtype=x.data.dtype))
        if weights.requires_grad:
            weights.accumulate(np.einsum("ij,ij->i", grad[targets], x.data[sources]).astype(weights.data.dtype))

    return make_result(out, (weights, x), backward, "edge_spmm")


def gather_rows(a: Value, index) -> Value:
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    rows = a.shape[0]

    def backward(grad):
        a.accumulate(_scatter_rows(grad, index, rows))

    return make_result(a.data[index], (a,), backward, "gather_rows")


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def backward(grad):
        for value, start, stop in zip(values, bounds[:-1], bounds[1:]):
            slicer = [slice(None)] * grad.ndim
            slicer[axis] = slice(start, stop)
            value.accumulate(grad[tuple(slicer)])

    return make_result(out, values, backward, "concat")


def sum(a: Value, axis=None) -> Value:  # noqa: A001
    shape = a.shape

    def backward(grad):
        if axis is None:
            a.accumulate(np.broadcast_to(grad, shape).astype(a.data.dtype))
        else:
            a.accumulate(np.broadcast_to(np.expand_dims(grad, axis), shape).astype(a.data.dtype))

    return make_result(np.asarray(a.data.sum(axis=axis)), (a,), backward, "sum")


def mean(a: Value, axis=None) -> Value:
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("mean over an empty axis")
    return mul(sum(a, axis=axis), 1.0 / count)


def exp(a: Value) -> Value:
    out = np.exp(a.data)

    def backward(grad):
        a.accumulate(grad * out)

    return make_result(out, (a,), backward, "exp")


def log(a: Value) -> Value:
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")

    def backward(grad):
        a.accumulate(grad / a.data)

    return make_result(np.log(a.data), (a,), backward, "log")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    z = np.exp(x[~positive])
    out[~positive] = z / (1.0 + z)
    return out


def sigmoid(a: Value) -> Value:
    out = _stable_sigmoid(a.data)

    def backward(grad):
        a.accumulate(grad * out * (1.0 - out))

    return make_result(out, (a,), backward, "sigmoid")


def log_sigmoid(a: Value) -> Value:
    """log(sigmoid(x)) evaluated without underflow."""
    x = a.data
    out = -np.logaddexp(0.0, -x)

    def backward(grad):
        a.accumulate(grad * _stable_sigmoid(-x))

    return make_result(out.astype(x.dtype), (a,), backward, "log_sigmoid")


def logsumexp(a: Value, axis: int = 1) -> Value:
    peak = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + peak).squeeze(axis)

    def backward(grad):
        a.accumulate(np.expand_dims(grad, axis) * shifted / total)

    return make_result(out, (a,), backward, "logsumexp")


def relu(a: Value) -> Value:
    mask = a.data > 0

    def backward(grad):
        a.accumulate(grad * mask)

    return make_result(a.data * mask, (a,), backward, "relu")


def tanh(a: Value) -> Value:
    out = np.tanh(a.data)

    def backward(grad):
        a.accumulate(grad * (1.0 - out * out))

    return make_result(out, (a,), backward, "tanh")


def clamp(a: Value, low: float, high: float) -> Value:
    """Clip to [low, high]; zero gradient outside the open interval."""
    active = (a.data > low) & (a.data < high)

    def backward(grad):
        a.accumulate(grad * active)

    return make_result(np.clip(a.data, low, high), (a,), backward, "clamp")


def l2_normalize_rows(a: Value) -> Value:
    if a.data.ndim != 2:
        raise ShapeError(f"l2_normalize_rows expects a matrix, got shape {a.shape}")
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("cannot normalize a zero-norm row")
    out = a.data / norms

    def backward(grad):
        radial = np.sum(grad * out, axis=1, keepdims=True)
        a.accumulate((grad - out * radial) / norms)

    return make_result(out, (a,), backward, "l2_normalize_rows")


def frobenius_sq(a: Value) -> Value:
    """Squared Frobenius norm."""

    def backward(grad):
        a.accumulate(2.0 * grad * a.data)

    return make_result(np.asarray(np.sum(a.data * a.data)), (a,), backward, "frobenius_sq")


def row_dot(a: Value, b: Value) -> Value:
    """Row-wise inner products of two equally shaped matrices."""
    if a.shape != b.shape:
        raise ShapeError(f"row_dot: shapes {a.shape} and {b.shape} differ")
    return sum(mul(a, b), axis=1)


def stack_sum(values: Sequence[Value]) -> Value:
    """Element-wise sum of equally shaped Values."""
    total = values[0]
    for value in values[1:]:
        total = add(total, value)
    return total
