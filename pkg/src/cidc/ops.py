"""Differentiable primitive operations.

Every operation runs a forward pass and returns a DualResult: the output
tensor plus a backward closure that maps an upstream gradient (of exactly
the output's shape) to one gradient per differentiable input, as a tuple in
input order. Non-differentiable arguments (masks, strides, RNGs, flags) are
bound by the closure and get no gradient slot.

Feature-map operations take (channel, time, width, height) tensors and also
accept one leading batch axis; parameter tensors are never batched. All
arithmetic is float64.
"""
from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DegenerateMaskError, DimensionError
from .tensor import DTYPE, Tensor, resize_weights


@dataclass(frozen=True)
class DualResult:
    """Forward output paired with its reverse-mode backward closure."""

    output: Tensor | float
    backward: Callable[..., tuple]


def _with_batch(x: Tensor, core_rank: int, name: str) -> tuple[Tensor, bool]:
    """Normalize x to core_rank+1 dims; report whether a batch axis was added."""
    if x.ndim == core_rank:
        return x[None], True
    if x.ndim == core_rank + 1:
        return x, False
    raise DimensionError(
        f"{name} expects rank {core_rank} (or {core_rank + 1} with batch), got {x.ndim}"
    )


def _restore(x: Tensor, squeeze: bool) -> Tensor:
    return x[0] if squeeze else x


def relu(x: Tensor) -> DualResult:
    """Elementwise max(x, 0)."""
    gate = x > 0

    def backward(g: Tensor) -> tuple[Tensor]:
        return (np.where(gate, g, 0.0),)

    return DualResult(np.where(gate, x, 0.0), backward)


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> DualResult:
    """Affine map weights @ x + bias on the last axis of x."""
    if weights.ndim != 2 or bias.shape != (weights.shape[0],):
        raise DimensionError("linear weights must be (out, in) with matching bias")
    if x.shape[-1] != weights.shape[1]:
        raise DimensionError(
            f"linear input extent {x.shape[-1]} != fan-in {weights.shape[1]}"
        )
    xb, squeeze = _with_batch(x, 1, "linear")
    out = xb @ weights.T + bias

    def backward(g: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        gb = g[None] if squeeze else g
        dx = gb @ weights
        dw = gb.T @ xb
        db = gb.sum(axis=0)
        return _restore(dx, squeeze), dw, db

    return DualResult(_restore(out, squeeze), backward)


def pointwise_conv(x: Tensor, weights: Tensor, bias: Tensor) -> DualResult:
    """1x1 channel mixing: out[o,t,w,h] = bias[o] + sum_i weights[o,i] * x[i,t,w,h]."""
    if weights.ndim != 2 or bias.shape != (weights.shape[0],):
        raise DimensionError("pointwise weights must be (out, in) with matching bias")
    xb, squeeze = _with_batch(x, 4, "pointwise_conv")
    if xb.shape[1] != weights.shape[1]:
        raise DimensionError(
            f"pointwise fan-in {weights.shape[1]} != input channels {xb.shape[1]}"
        )
    out = np.moveaxis(np.tensordot(weights, xb, axes=([1], [1])), 0, 1)
    out += bias[:, None, None, None]

    def backward(g: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        gb = g[None] if squeeze else g
        dx = np.moveaxis(np.tensordot(weights.T, gb, axes=([1], [1])), 0, 1)
        dw = np.tensordot(gb, xb, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        db = gb.sum(axis=(0, 2, 3, 4))
        return _restore(dx, squeeze), dw, db

    return DualResult(_restore(out, squeeze), backward)


def spatial_conv3x3(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1) -> DualResult:
    """Per-frame 3x3 cross-correlation with zero padding 1.

    Spatial extents map to ceil(extent / stride); time is untouched.
    """
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ArgumentError(f"stride must be a positive integer, got {stride}")
    if weights.ndim != 4 or weights.shape[2:] != (3, 3):
        raise DimensionError("conv weights must be (out, in, 3, 3)")
    if bias.shape != (weights.shape[0],):
        raise DimensionError("conv bias must match output channels")
    xb, squeeze = _with_batch(x, 4, "spatial_conv3x3")
    n, c_in, t, w, h = xb.shape
    if c_in != weights.shape[1]:
        raise DimensionError(
            f"conv fan-in {weights.shape[1]} != input channels {c_in}"
        )
    if w < 3 or h < 3:
        raise DimensionError(f"spatial extents must be >= 3, got {w}x{h}")
    c_out = weights.shape[0]
    w_out = (w + stride - 1) // stride
    h_out = (h + stride - 1) // stride

    padded = np.pad(xb, ((0, 0), (0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(padded, (3, 3), axis=(3, 4))[:, :, :, ::stride, ::stride]
    # (n, t, w_out, h_out, c_in*9) layout feeds a single GEMM per call.
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6))
    cols = cols.reshape(n * t * w_out * h_out, c_in * 9)
    flat = cols @ weights.reshape(c_out, c_in * 9).T
    out = np.moveaxis(flat.reshape(n, t, w_out, h_out, c_out), 4, 1) + bias[:, None, None, None]

    def backward(g: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        gb = g[None] if squeeze else g
        gcols = np.ascontiguousarray(np.moveaxis(gb, 1, 4)).reshape(-1, c_out)
        dw = (gcols.T @ cols).reshape(c_out, c_in, 3, 3)
        db = gcols.sum(axis=0)
        dcols = (gcols @ weights.reshape(c_out, c_in * 9)).reshape(
            n, t, w_out, h_out, c_in, 3, 3
        )
        dwin = dcols.transpose(0, 4, 1, 2, 3, 5, 6)
        dpad = np.zeros_like(padded)
        for dr in range(3):
            for dc in range(3):
                dpad[
                    :, :, :,
                    dr : dr + stride * (w_out - 1) + 1 : stride,
                    dc : dc + stride * (h_out - 1) + 1 : stride,
                ] += dwin[..., dr, dc]
        dx = dpad[:, :, :, 1:-1, 1:-1]
        return _restore(dx, squeeze), dw, db

    return DualResult(_restore(out, squeeze), backward)


def _pool_weights(extent: int, factor: int) -> np.ndarray:
    """Averaging matrix for non-overlapping windows; a short tail window is
    averaged over its actual size, so the output extent is ceil(extent/factor)."""
    n_out = (extent + factor - 1) // factor
    mat = np.zeros((n_out, extent), dtype=DTYPE)
    for o in range(n_out):
        lo, hi = o * factor, min(extent, o * factor + factor)
        mat[o, lo:hi] = 1.0 / (hi - lo)
    return mat


def avg_pool_spatial(x: Tensor, factor: int) -> DualResult:
    """Average pooling over factor-sized spatial windows."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ArgumentError(f"pool factor must be a positive integer, got {factor}")
    xb, squeeze = _with_batch(x, 4, "avg_pool_spatial")
    pw = _pool_weights(xb.shape[3], factor)
    ph = _pool_weights(xb.shape[4], factor)
    t1 = np.tensordot(xb, pw, axes=([3], [1]))          # (n, c, t, h, w_out)
    out = np.tensordot(t1, ph, axes=([3], [1]))         # (n, c, t, w_out, h_out)

    def backward(g: Tensor) -> tuple[Tensor]:
        gb = g[None] if squeeze else g
        t2 = np.tensordot(gb, ph, axes=([4], [0]))      # (n, c, t, w_out, h)
        dx = np.tensordot(t2, pw, axes=([3], [0]))      # (n, c, t, h, w)
        return (_restore(dx.swapaxes(3, 4), squeeze),)

    return DualResult(_restore(out, squeeze), backward)


def global_avg_pool(x: Tensor) -> DualResult:
    """Mean over time and space, one value per channel."""
    xb, squeeze = _with_batch(x, 4, "global_avg_pool")
    count = xb.shape[2] * xb.shape[3] * xb.shape[4]
    out = xb.mean(axis=(2, 3, 4))

    def backward(g: Tensor) -> tuple[Tensor]:
        gb = g[None] if squeeze else g
        dx = np.broadcast_to(
            gb[:, :, None, None, None] / count, xb.shape
        ).copy()
        return (_restore(dx, squeeze),)

    return DualResult(_restore(out, squeeze), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train_flag: bool) -> DualResult:
    """Inverted dropout: zero each element with probability rate while
    training and scale survivors by 1/(1-rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train_flag or rate == 0.0:
        def backward_eval(g: Tensor) -> tuple[Tensor]:
            return (np.array(g, dtype=DTYPE, copy=True),)

        return DualResult(x.copy(), backward_eval)
    if rng is None:
        raise ArgumentError("training-mode dropout needs an explicit RNG")
    scale = 1.0 / (1.0 - rate)
    keep = rng.random(x.shape) >= rate

    def backward(g: Tensor) -> tuple[Tensor]:
        return (np.where(keep, g * scale, 0.0),)

    return DualResult(np.where(keep, x * scale, 0.0), backward)


def flip_time(x: Tensor) -> DualResult:
    """Reverse the temporal axis of a feature map."""
    xb, squeeze = _with_batch(x, 4, "flip_time")
    out = xb[:, :, ::-1].copy()

    def backward(g: Tensor) -> tuple[Tensor]:
        gb = g[None] if squeeze else g
        return (_restore(gb[:, :, ::-1].copy(), squeeze),)

    return DualResult(_restore(out, squeeze), backward)


def resize_spatial(x: Tensor, out_w: int, out_h: int) -> DualResult:
    """Corner-aligned bilinear resize of the trailing two axes."""
    if out_w < 1 or out_h < 1:
        raise ArgumentError("output extents must be >= 1")
    if x.ndim < 2:
        raise DimensionError("resize_spatial needs at least two axes")
    rw = resize_weights(x.shape[-2], out_w)
    rh = resize_weights(x.shape[-1], out_h)
    t1 = np.tensordot(x, rw, axes=([-2], [1]))
    out = np.tensordot(t1, rh, axes=([-2], [1]))

    def backward(g: Tensor) -> tuple[Tensor]:
        t2 = np.tensordot(g, rh, axes=([-1], [0]))
        dx = np.tensordot(t2, rw, axes=([-2], [0])).swapaxes(-1, -2)
        return (dx,)

    return DualResult(out, backward)


def masked_softmax_rows(logits: Tensor, mask: Tensor) -> DualResult:
    """Row-wise softmax over the unmasked entries of a 2-D tensor.

    mask[r, c] == 1 excludes position (r, c) from the row's distribution and
    pins the output there to exactly 0. Masked entries never enter the
    normalizing sum, so no infinities are manufactured.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise DimensionError(f"expected 2-D logits, got rank {logits.ndim}")
    if mask.shape != logits.shape:
        raise DimensionError(f"mask shape {mask.shape} != logits shape {logits.shape}")
    keep = np.asarray(mask) == 0
    out = _masked_softmax(logits, keep)

    def backward(g: Tensor) -> tuple[Tensor]:
        return (_masked_softmax_vjp(out, g),)

    return DualResult(out, backward)


def _masked_softmax(logits: Tensor, keep: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to keep == True positions.

    Works on any leading axes; keep broadcasts against the trailing axes.
    """
    keep = np.broadcast_to(keep, logits.shape)
    if not keep.any(axis=-1).all():
        raise DegenerateMaskError("a row has every position masked")
    shifted = logits - np.max(np.where(keep, logits, -np.inf), axis=-1, keepdims=True)
    weights = np.where(keep, np.exp(np.where(keep, shifted, 0.0)), 0.0)
    return weights / weights.sum(axis=-1, keepdims=True)


def _masked_softmax_vjp(out: Tensor, g: Tensor) -> Tensor:
    """Softmax Jacobian-vector product; exact zeros in out kill masked slots."""
    inner = (g * out).sum(axis=-1, keepdims=True)
    return out * (g - inner)


def softmax_cross_entropy(logits: Tensor, label: int | np.ndarray) -> DualResult:
    """Cross entropy between softmax(logits) and an integer class label.

    Batched logits (batch, classes) take a label vector and return the mean
    loss over the batch.
    """
    lb, squeeze = _with_batch(np.asarray(logits, dtype=DTYPE), 1, "softmax_cross_entropy")
    labels = np.atleast_1d(np.asarray(label))
    if labels.shape != (lb.shape[0],):
        raise DimensionError(f"expected {lb.shape[0]} labels, got shape {labels.shape}")
    if labels.dtype.kind not in "iu" or (labels < 0).any() or (labels >= lb.shape[1]).any():
        raise ArgumentError(f"labels must be integers in [0, {lb.shape[1]})")
    n = lb.shape[0]
    shifted = lb - lb.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(n), labels]
    loss = float(losses.mean())

    def backward(g: float) -> tuple[Tensor]:
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), labels] -= 1.0
        dlogits = probs * (g / n)
        return (_restore(dlogits, squeeze),)

    return DualResult(loss, backward)


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of comparing an analytic backward pass against central differences."""

    max_rel_error: float
    per_input: tuple[float, ...]
    worst_input: int
    worst_index: int
    tolerance: float
    passed: bool


def grad_check(
    fn: Callable[..., DualResult],
    inputs: Sequence[Tensor],
    epsilon: float = 1e-6,
    tolerance: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Check fn's analytic gradients against central finite differences.

    fn must map the given differentiable inputs to a DualResult and be
    deterministic across calls (freeze any internal randomness first). The
    output is probed through a fixed random projection so tensor-valued
    results reduce to one scalar per perturbation. Relative error per
    element is |a - n| / max(1e-8, |a| + |n|).
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ArgumentError(f"epsilon must lie in [1e-7, 1e-4], got {epsilon}")
    inputs = [np.array(v, dtype=DTYPE, copy=True) for v in inputs]
    base = fn(*inputs)
    scalar_out = np.isscalar(base.output) or np.ndim(base.output) == 0
    if scalar_out:
        seed_grad: Tensor | float = 1.0
    else:
        proj_rng = rng if rng is not None else np.random.default_rng(0)
        seed_grad = proj_rng.standard_normal(np.shape(base.output))

    analytic = base.backward(seed_grad)
    if not isinstance(analytic, tuple):
        analytic = (analytic,)
    if len(analytic) != len(inputs):
        raise DimensionError(
            f"backward returned {len(analytic)} gradients for {len(inputs)} inputs"
        )

    def probe(values: Sequence[Tensor]) -> float:
        out = fn(*values).output
        if scalar_out:
            return float(out)
        return float(np.vdot(seed_grad, out))

    per_input = []
    worst = (0.0, 0, 0)
    for i, x in enumerate(inputs):
        grad = np.asarray(analytic[i], dtype=DTYPE)
        if grad.shape != x.shape:
            raise DimensionError(
                f"gradient {i} has shape {grad.shape}, input has {x.shape}"
            )
        worst_here = 0.0
        flat = x.reshape(-1)
        for j in range(flat.size):
            keep_value = flat[j]
            flat[j] = keep_value + epsilon
            plus = probe(inputs)
            flat[j] = keep_value - epsilon
            minus = probe(inputs)
            flat[j] = keep_value
            numeric = (plus - minus) / (2.0 * epsilon)
            a = grad.reshape(-1)[j]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst_here:
                worst_here = rel
            if rel > worst[0]:
                worst = (rel, i, j)
        per_input.append(worst_here)
    max_rel = worst[0]
    return GradCheckReport(
        max_rel_error=max_rel,
        per_input=tuple(per_input),
        worst_input=worst[1],
        worst_index=worst[2],
        tolerance=tolerance,
        passed=max_rel <= tolerance,
    )
