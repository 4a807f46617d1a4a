"""
The closed operation vocabulary of the autodiff engine.

Every function takes tensors (or anything `np.asarray` accepts, treated as a
constant) and returns a new `Tensor` whose backward closure maps the output
gradient to one gradient per input.
"""
import itertools
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from volumae.exceptions import NonFiniteError
from volumae.numerics.tensor import Tensor, as_tensor


Axis = Optional[Union[int, Tuple[int, ...]]]

_GELU_C = np.sqrt(2.0 / np.pi)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # Sum gradients across broadcasted dimensions to match `shape`
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand_reduced(grad: np.ndarray, axes: Tuple[int, ...], keepdims: bool):
    if keepdims:
        return grad
    for a in axes:
        grad = np.expand_dims(grad, a)
    return grad


def _check_finite(op: str, *arrays: np.ndarray) -> None:
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(op)


# Elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), _backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), _backward, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return Tensor.from_op(a.data * b.data, (a, b), _backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return Tensor.from_op(a.data / b.data, (a, b), _backward, "div")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading (batch) axes"""

    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(a.data @ b.data, (a, b), _backward, "matmul")


# Nonlinearities


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def gelu(x) -> Tensor:
    """GELU, tanh approximation"""

    x = as_tensor(x)
    v = x.data
    t = np.tanh(_GELU_C * (v + 0.044715 * v**3))
    y = 0.5 * v * (1.0 + t)

    def _backward(g):
        sech2 = 1.0 - t * t
        dy = 0.5 * (1.0 + t) + 0.5 * v * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * dy,)

    return Tensor.from_op(y, (x,), _backward, "gelu")


def softplus(x) -> Tensor:
    """log(1 + exp(x)) evaluated without overflow"""

    x = as_tensor(x)
    v = x.data
    e = np.exp(-np.abs(v))
    y = np.maximum(v, 0.0) + np.log1p(e)

    def _backward(g):
        s = 1.0 / (1.0 + e)
        sigmoid = np.where(v >= 0, s, e * s)
        return (g * sigmoid,)

    return Tensor.from_op(y, (x,), _backward, "softplus")


def softmax(logits, axis: int = -1) -> Tensor:
    logits = as_tensor(logits)
    if axis >= logits.ndim or axis < -logits.ndim:
        raise ValueError(f"softmax axis {axis} out of range for rank {logits.ndim}")
    _check_finite("softmax", logits.data)

    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(y, (logits,), _backward, "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis followed by a learned affine map"""

    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = xhat * gamma.data + beta.data

    def _backward(g):
        dxhat = g * gamma.data
        dx = (
            inv_std
            / n
            * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        )
        return (
            dx,
            _unbroadcast(g * xhat, gamma.shape),
            _unbroadcast(g, beta.shape),
        )

    return Tensor.from_op(y, (x, gamma, beta), _backward, "layer_norm")


# Reductions


def sum(x, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)

    def _backward(g):
        return (np.broadcast_to(_expand_reduced(g, axes, keepdims), x.shape).copy(),)

    return Tensor.from_op(
        np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), _backward, "sum"
    )


def mean(x, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def _backward(g):
        grad = np.broadcast_to(_expand_reduced(g, axes, keepdims), x.shape) / count
        return (grad,)

    return Tensor.from_op(
        np.asarray(x.data.mean(axis=axes, keepdims=keepdims)), (x,), _backward, "mean"
    )


def amin(x, axis: int = -1) -> Tensor:
    """Minimum along one axis; the gradient is shared between tied minima"""

    x = as_tensor(x)
    axis = axis % x.ndim
    y = x.data.min(axis=axis)

    def _backward(g):
        hit = x.data == np.expand_dims(y, axis)
        share = hit / hit.sum(axis=axis, keepdims=True)
        return (share * np.expand_dims(g, axis),)

    return Tensor.from_op(y, (x,), _backward, "amin")


# Shape manipulation


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old_shape = x.shape
    return Tensor.from_op(
        x.data.reshape(shape), (x,), lambda g: (g.reshape(old_shape),), "reshape"
    )


def transpose(x, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(
        np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, _backward, "concat"
    )


def split(x, sections: int, axis: int = -1) -> Tuple[Tensor, ...]:
    """Split into equal parts, built from `getitem`"""

    x = as_tensor(x)
    axis = axis % x.ndim
    width = x.shape[axis] // sections
    parts = []
    for i in range(sections):
        index = [slice(None)] * x.ndim
        index[axis] = slice(i * width, (i + 1) * width)
        parts.append(getitem(x, tuple(index)))
    return tuple(parts)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    def _backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return Tensor.from_op(np.array(x.data[index]), (x,), _backward, "getitem")


def gather(x, indices, axis: int = 0) -> Tensor:
    """Select entries of `x` along `axis` (duplicates allowed)"""

    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim

    def _backward(g):
        grad = np.zeros_like(x.data)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (grad,)

    return Tensor.from_op(np.take(x.data, indices, axis=axis), (x,), _backward, "gather")


def scatter(x, indices, size: int, axis: int = 0) -> Tensor:
    """
    Place the entries of `x` along `axis` of a zero tensor of length `size`;
    entries sharing an index are summed.
    """

    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    shape = list(x.shape)
    shape[axis] = size
    out = np.zeros(shape)
    np.add.at(np.moveaxis(out, axis, 0), indices, np.moveaxis(x.data, axis, 0))

    def _backward(g):
        return (np.take(g, indices, axis=axis),)

    return Tensor.from_op(out, (x,), _backward, "scatter")


# Sampling


def _sample_multilinear(grid: Tensor, coords: Tensor, op: str) -> Tensor:
    """
    Multilinear interpolation of a (C, *dims) grid at N points given in
    the index space of `dims` (integer coordinates are grid nodes); neighbors
    falling outside the grid contribute zero.
    """

    _check_finite(op, grid.data, coords.data)

    channels = grid.shape[0]
    dims = grid.shape[1:]
    ndim = len(dims)
    points = coords.data.reshape(-1, ndim)
    table = grid.data.reshape(channels, -1).T

    base = np.floor(points)
    frac = points - base
    base = base.astype(np.int64)

    corners = []
    out = np.zeros((points.shape[0], channels))
    for offsets in itertools.product((0, 1), repeat=ndim):
        index = base + np.asarray(offsets)
        valid = np.ones(points.shape[0], dtype=bool)
        for k in range(ndim):
            valid &= (index[:, k] >= 0) & (index[:, k] < dims[k])
        factors = np.stack(
            [frac[:, k] if offsets[k] else 1.0 - frac[:, k] for k in range(ndim)], axis=1
        )
        weight = np.prod(factors, axis=1) * valid
        flat = np.ravel_multi_index(
            tuple(np.clip(index[:, k], 0, dims[k] - 1) for k in range(ndim)), dims
        )
        values = table[flat] * valid[:, None]
        out += weight[:, None] * values
        corners.append((offsets, factors, weight, flat, valid, values))

    def _backward(g):
        g = g.reshape(-1, channels)
        grad_table = np.zeros_like(table)
        grad_points = np.zeros_like(points)
        for offsets, factors, weight, flat, valid, values in corners:
            np.add.at(grad_table, flat[valid], weight[valid, None] * g[valid])
            dot = (g * values).sum(axis=1)
            for k in range(ndim):
                others = np.prod(np.delete(factors, k, axis=1), axis=1)
                sign = 1.0 if offsets[k] else -1.0
                grad_points[:, k] += sign * others * dot
        return (
            grad_table.T.reshape(grid.shape),
            grad_points.reshape(coords.shape),
        )

    out_shape = coords.shape[:-1] + (channels,)
    return Tensor.from_op(out.reshape(out_shape), (grid, coords), _backward, op)


def sample_bilinear_2d(grid, location) -> Tensor:
    """
    Sample a (C, Hf, Wf) grid at pixel locations `(..., 2)` given as (u, v),
    u along the width and v along the height. Returns `(..., C)`.
    """

    grid, location = as_tensor(grid), as_tensor(location)
    # (u, v) -> (row, column) index order of the grid
    swapped = gather(location, [1, 0], axis=-1)
    return _sample_multilinear(grid, swapped, "sample_bilinear_2d")


def sample_trilinear_3d(volume, location) -> Tensor:
    """Sample a (C, H, W, Z) volume at cell-unit locations `(..., 3)`"""

    volume, location = as_tensor(volume), as_tensor(location)
    return _sample_multilinear(volume, location, "sample_trilinear_3d")
