"""Channel-independent directional temporal convolution.

Each channel owns a (t_out, t_in) kernel of temporal mixing weights. A
directional mask forbids the positions that would let an output step see
later input steps; masked weights are exactly zero, so causality violations
are structurally impossible rather than merely small. The surviving weights
are a row softmax, linearly rescaled per channel to [-1, 1], and a 1x1
channel mix follows the temporal aggregation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateMaskError, DimensionError
from .ops import (
    DualResult,
    _masked_softmax,
    _restore,
    _with_batch,
    flip_time,
    pointwise_conv,
)
from .tensor import DTYPE, Tensor, bilinear_resize_2d

MaskMatrix = np.ndarray

RESCALE_EPS = 1e-9

_mask_cache: dict[tuple[int, int, bool], np.ndarray] = {}


@dataclass
class CIDCParams:
    """Parameters of one unit: temporal kernel, channel mix, and direction."""

    k: Tensor              # (channels_in, t_out, t_in)
    mix_weights: Tensor    # (channels_out, channels_in)
    mix_bias: Tensor       # (channels_out,)
    direction: str = "forward"


def init_unit_params(
    rng: np.random.Generator,
    channels_in: int,
    channels_out: int,
    t_out: int,
    t_in: int,
    direction: str = "forward",
) -> CIDCParams:
    """Fresh parameters: tiny uniform kernel, fan-in scaled mix, zero bias."""
    k = rng.uniform(-0.01, 0.01, size=(channels_in, t_out, t_in)).astype(DTYPE)
    bound = 1.0 / np.sqrt(channels_in)
    mix = rng.uniform(-bound, bound, size=(channels_out, channels_in)).astype(DTYPE)
    return CIDCParams(k, mix, np.zeros(channels_out, dtype=DTYPE), direction)


def _frozen(mask: np.ndarray) -> np.ndarray:
    mask.setflags(write=False)
    return mask


def build_directional_mask(t_out: int, t_in: int) -> MaskMatrix:
    """Binary (t_out, t_in) matrix; 1 marks a forbidden (output, input) pair.

    With equal extents this is the strict upper triangle. Otherwise a square
    (t_in, t_in) strict upper triangle is resized to (t_out, t_in) with
    corner-aligned bilinear interpolation and any positive value is masked.
    """
    if t_out < 1 or t_in < 1:
        raise ArgumentError(f"temporal extents must be >= 1, got ({t_out}, {t_in})")
    key = (t_out, t_in, True)
    if key not in _mask_cache:
        if t_out == t_in:
            mask = np.triu(np.ones((t_in, t_in), dtype=np.uint8), k=1)
        else:
            square = np.triu(np.ones((t_in, t_in), dtype=DTYPE), k=1)
            mask = (bilinear_resize_2d(square, t_out, t_in) > 0).astype(np.uint8)
        if (mask.sum(axis=1) == t_in).any():
            raise DegenerateMaskError(
                f"mask rescale to ({t_out}, {t_in}) left a fully masked row"
            )
        _mask_cache[key] = _frozen(mask)
    return _mask_cache[key]


def zero_mask(t_out: int, t_in: int) -> MaskMatrix:
    """All-permitted mask of the same dtype and shape conventions."""
    if t_out < 1 or t_in < 1:
        raise ArgumentError(f"temporal extents must be >= 1, got ({t_out}, {t_in})")
    key = (t_out, t_in, False)
    if key not in _mask_cache:
        _mask_cache[key] = _frozen(np.zeros((t_out, t_in), dtype=np.uint8))
    return _mask_cache[key]


def normalize_kernel(k: Tensor, mask: MaskMatrix) -> DualResult:
    """Constrain a raw kernel to masked, bounded mixing weights.

    Per channel: row softmax over unmasked positions, then one affine map
    over the channel's unmasked values sending their min to -1 and max to +1.
    The rescale is skipped when the value spread is at most 1e-9 (a single
    unmasked position, or an exactly constant channel). Masked positions are
    exactly 0 in the output, and the whole map is differentiable in k.
    """
    k = np.asarray(k)
    if k.ndim != 3:
        raise DimensionError(f"kernel must be (channels, t_out, t_in), got rank {k.ndim}")
    if mask.shape != k.shape[1:]:
        raise DimensionError(f"mask shape {mask.shape} != kernel rows {k.shape[1:]}")
    keep = np.asarray(mask) == 0
    soft = _masked_softmax(k, keep)
    channels = k.shape[0]
    keep_pos = np.flatnonzero(keep.ravel())
    vals = soft.reshape(channels, -1)[:, keep_pos]
    lo = vals.min(axis=1)
    hi = vals.max(axis=1)
    at_lo = keep_pos[vals.argmin(axis=1)]
    at_hi = keep_pos[vals.argmax(axis=1)]
    span = hi - lo
    fire = span > RESCALE_EPS
    safe_span = np.where(fire, span, 1.0)
    gain = 2.0 / safe_span
    scaled = (soft - lo[:, None, None]) * gain[:, None, None] - 1.0
    out = np.where(keep, np.where(fire[:, None, None], scaled, soft), 0.0)

    def backward(g: Tensor) -> tuple[Tensor]:
        gk = np.where(keep, g, 0.0)
        gv = gk.reshape(channels, -1)[:, keep_pos]
        total = gv.sum(axis=1)
        weighted = (gv * (vals - lo[:, None])).sum(axis=1)
        dsoft = np.where(fire[:, None, None], gk * gain[:, None, None], gk)
        flat = dsoft.reshape(channels, -1)
        rows = np.flatnonzero(fire)
        flat[rows, at_lo[fire]] += (-gain * total + (gain / safe_span) * weighted)[fire]
        flat[rows, at_hi[fire]] += (-(gain / safe_span) * weighted)[fire]
        inner = (dsoft * soft).sum(axis=-1, keepdims=True)
        dk = soft * (dsoft - inner)
        return (dk,)

    return DualResult(out, backward)


def cidc_apply(f: Tensor, w: Tensor) -> DualResult:
    """Per-channel temporal mixing: out[c,t,·] = sum_s w[c,t,s] * f[c,s,·]."""
    if w.ndim != 3:
        raise DimensionError(f"weights must be (channels, t_out, t_in), got rank {w.ndim}")
    fb, squeeze = _with_batch(f, 4, "cidc_apply")
    n, c, t_in, wd, ht = fb.shape
    if w.shape[0] != c or w.shape[2] != t_in:
        raise DimensionError(
            f"weights {w.shape} incompatible with feature channels {c}, time {t_in}"
        )
    t_out = w.shape[1]
    flat = fb.reshape(n, c, t_in, wd * ht)
    out = np.matmul(w[None], flat).reshape(n, c, t_out, wd, ht)

    def backward(g: Tensor) -> tuple[Tensor, Tensor]:
        gb = g[None] if squeeze else g
        gflat = gb.reshape(n, c, t_out, wd * ht)
        df = np.matmul(w.swapaxes(1, 2)[None], gflat).reshape(fb.shape)
        dw = np.matmul(gflat, flat.swapaxes(2, 3)).sum(axis=0)
        return _restore(df, squeeze), dw

    return DualResult(_restore(out, squeeze), backward)


def cidc_unit_forward(f: Tensor, params: CIDCParams, masked: bool = True) -> DualResult:
    """One unit: mask, normalize, temporally mix, then 1x1 channel mix.

    A backward-direction unit flips the input along time, applies the same
    machinery, and flips the result back before the channel mix, so its
    outputs stay in the input's temporal order while attending to the
    future instead of the past. Gradients flow to (f, k, mix_weights,
    mix_bias).
    """
    if params.direction not in ("forward", "backward"):
        raise ArgumentError(f"unknown direction {params.direction!r}")
    c_in, t_out, t_in = params.k.shape
    feat_c = f.shape[-4]
    feat_t = f.shape[-3]
    if feat_c != c_in or feat_t != t_in:
        raise DimensionError(
            f"unit kernel {params.k.shape} incompatible with feature "
            f"channels {feat_c}, time {feat_t}"
        )
    mask = build_directional_mask(t_out, t_in) if masked else zero_mask(t_out, t_in)
    norm = normalize_kernel(params.k, mask)
    reverse = params.direction == "backward"

    flip_in = flip_time(f) if reverse else None
    applied = cidc_apply(flip_in.output if reverse else f, norm.output)
    flip_out = flip_time(applied.output) if reverse else None
    mixed = pointwise_conv(
        flip_out.output if reverse else applied.output,
        params.mix_weights,
        params.mix_bias,
    )

    def backward(g: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        dbody, dmw, dmb = mixed.backward(g)
        if reverse:
            (dbody,) = flip_out.backward(dbody)
        df, dw = applied.backward(dbody)
        if reverse:
            (df,) = flip_in.backward(df)
        (dk,) = norm.backward(dw)
        return df, dk, dmw, dmb

    return DualResult(mixed.output, backward)


def bidirectional_cidc(
    f: Tensor,
    forward_params: CIDCParams,
    backward_params: CIDCParams,
    masked: bool = True,
) -> DualResult:
    """Concatenate a forward and a backward unit along the temporal axis.

    The first half of the output is bit-identical to the forward unit alone.
    Gradients flow to (f, then the forward unit's three parameter tensors,
    then the backward unit's three).
    """
    if forward_params.direction != "forward":
        raise ArgumentError("first parameter set must have direction 'forward'")
    if backward_params.direction != "backward":
        raise ArgumentError("second parameter set must have direction 'backward'")
    fwd = cidc_unit_forward(f, forward_params, masked)
    bwd = cidc_unit_forward(f, backward_params, masked)
    t_half = fwd.output.shape[-3]
    if bwd.output.shape != fwd.output.shape:
        raise DimensionError("forward and backward halves disagree in shape")
    out = np.concatenate([fwd.output, bwd.output], axis=-3)

    def backward(g: Tensor) -> tuple:
        g_fwd = g[..., :t_half, :, :]
        g_bwd = g[..., t_half:, :, :]
        df_f, dk_f, dmw_f, dmb_f = fwd.backward(g_fwd)
        df_b, dk_b, dmw_b, dmb_b = bwd.backward(g_bwd)
        return df_f + df_b, dk_f, dmw_f, dmb_f, dk_b, dmw_b, dmb_b

    return DualResult(out, backward)
