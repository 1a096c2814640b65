"""Dense tensor helpers.

Tensors are plain float64 numpy arrays in row-major order. Feature maps use
the axis order (channel, time, width, height); downstream operations accept
one optional leading batch axis on top of that.
"""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import ArgumentError, DimensionError

Tensor = np.ndarray

DTYPE = np.float64


def tensor_create(shape: Sequence[int], fill: float | Sequence[float] = 0.0) -> Tensor:
    """Allocate a tensor of the given extents, filled with a scalar or a flat value list."""
    shape = tuple(shape)
    if len(shape) == 0:
        raise ArgumentError("shape must be non-empty")
    for extent in shape:
        if not isinstance(extent, (int, np.integer)) or extent <= 0:
            raise ArgumentError(f"extents must be positive integers, got {shape}")
    if np.isscalar(fill):
        return np.full(shape, float(fill), dtype=DTYPE)
    values = np.asarray(fill, dtype=DTYPE)
    if values.ndim != 1 or values.size != int(np.prod(shape)):
        raise DimensionError(
            f"value list of length {values.size} does not fill shape {shape}"
        )
    return values.reshape(shape).copy()


def flip_axis(x: Tensor, axis: int) -> Tensor:
    """Reverse x along one axis. Exact: element values are moved, never recomputed."""
    if not 0 <= axis < x.ndim:
        raise ArgumentError(f"axis {axis} out of range for rank {x.ndim}")
    return np.flip(x, axis=axis).copy()


def resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned 1-D interpolation matrix of shape (n_out, n_in).

    Row i holds the convex weights that sample position i*(n_in-1)/(n_out-1)
    of the source axis; with matching extents this is exactly the identity.
    """
    if n_in < 1 or n_out < 1:
        raise ArgumentError("extents must be >= 1")
    mat = np.zeros((n_out, n_in), dtype=DTYPE)
    if n_out == 1 or n_in == 1:
        # Degenerate axes collapse onto the first source sample.
        coords = np.zeros(n_out, dtype=DTYPE)
    else:
        coords = np.arange(n_out, dtype=DTYPE) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(coords.astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coords - lo
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def bilinear_resize_2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize a 2-D tensor with corner-aligned bilinear interpolation.

    Matching extents return a bit-identical copy of the input.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D tensor, got rank {x.ndim}")
    if out_h < 1 or out_w < 1:
        raise ArgumentError("output extents must be >= 1")
    if (out_h, out_w) == x.shape:
        return x.copy()
    rows = resize_weights(x.shape[0], out_h)
    cols = resize_weights(x.shape[1], out_w)
    return rows @ x @ cols.T
