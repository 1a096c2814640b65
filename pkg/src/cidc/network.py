"""Multi-scale network around the directional temporal unit.

A small per-frame convolutional backbone taps features at every stage. The
deepest stage steers the earlier, higher-resolution stages through a spatial
attention gate; each gated stage feeds its own directional-convolution
branch; branch outputs are folded early-to-late by pooled, projected
addition; and the folded result is fused with the deepest backbone feature
before a pooled classifier head.

All forward passes return DualResults. multiscale_cidc_forward's backward
maps upstream logit gradients to (clip gradient, {parameter name: gradient}).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError
from .ops import (
    DualResult,
    _restore,
    _with_batch,
    avg_pool_spatial,
    dropout,
    global_avg_pool,
    linear,
    pointwise_conv,
    relu,
    resize_spatial,
    spatial_conv3x3,
)
from .tensor import DTYPE, Tensor
from .unit import CIDCParams, bidirectional_cidc, cidc_unit_forward, init_unit_params

FUSION_MODES = ("concat_t", "concat_c", "sum")
TEMPORAL_MODES = ("non", "uni", "bi", "pool")


@dataclass
class StageConfig:
    channels: int
    spatial_stride: int
    temporal_stride: int


@dataclass
class BranchConfig:
    t_in: int
    t_out: int            # per-unit output extent; a bidirectional unit emits 2*t_out
    channels: int
    bidirectional: bool
    unit_count: int


@dataclass
class BranchUnit:
    fwd: CIDCParams
    bwd: CIDCParams | None = None


@dataclass
class Model:
    in_channels: int
    in_t: int
    in_size: int
    n_classes: int
    fusion_mode: str
    temporal_mode: str
    dropout_rate: float
    stages: list[StageConfig]
    stage_weights: list[Tensor] = field(repr=False)
    stage_biases: list[Tensor] = field(repr=False)
    branches: list[BranchConfig]
    branch_units: list[list[BranchUnit]] = field(repr=False)
    projections: list[list[Tensor]] = field(repr=False)   # [weights, bias] per hop
    head_weights: Tensor = field(repr=False)
    head_bias: Tensor = field(repr=False)

    def parameters(self) -> dict[str, Tensor]:
        """Live parameter references in a fixed, documented order."""
        params: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(zip(self.stage_weights, self.stage_biases)):
            params[f"stage{i}.w"] = w
            params[f"stage{i}.b"] = b
        for bi, units in enumerate(self.branch_units):
            for ui, u in enumerate(units):
                params[f"branch{bi}.unit{ui}.fwd.k"] = u.fwd.k
                params[f"branch{bi}.unit{ui}.fwd.mix_w"] = u.fwd.mix_weights
                params[f"branch{bi}.unit{ui}.fwd.mix_b"] = u.fwd.mix_bias
                if u.bwd is not None:
                    params[f"branch{bi}.unit{ui}.bwd.k"] = u.bwd.k
                    params[f"branch{bi}.unit{ui}.bwd.mix_w"] = u.bwd.mix_weights
                    params[f"branch{bi}.unit{ui}.bwd.mix_b"] = u.bwd.mix_bias
        for pi, (w, b) in enumerate(self.projections):
            params[f"proj{pi}.w"] = w
            params[f"proj{pi}.b"] = b
        params["head.w"] = self.head_weights
        params["head.b"] = self.head_bias
        return params


def _sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def spatial_attention_map(f: Tensor) -> DualResult:
    """Per-site gate in (0, 1): sigmoid of the channel mean."""
    fb, squeeze = _with_batch(f, 4, "spatial_attention_map")
    channels = fb.shape[1]
    att = _sigmoid(fb.mean(axis=1))

    def backward(g: Tensor) -> tuple[Tensor]:
        gb = g[None] if squeeze else g
        local = gb * att * (1.0 - att) / channels
        return (_restore(np.broadcast_to(local[:, None], fb.shape).copy(), squeeze),)

    return DualResult(_restore(att, squeeze), backward)


def _match_time(t_early: int, t_late: int) -> np.ndarray:
    """Nearest-time index of each early step into the late feature."""
    if t_early != t_late and t_early % t_late != 0 and t_late % t_early != 0:
        raise DimensionError(
            f"temporal extents {t_early} and {t_late} are neither equal nor integer multiples"
        )
    return (np.arange(t_early) * t_late) // t_early


def attention_propagate(f_late: Tensor, f_early: Tensor) -> DualResult:
    """Gate an early feature by upsampled attention from a late feature.

    out = resize(att(f_late)) * f_early + f_early, with the gate replicated
    to the nearest late time step when the temporal extents differ.
    Gradients flow to (f_late, f_early).
    """
    lb, lsq = _with_batch(f_late, 4, "attention_propagate")
    eb, esq = _with_batch(f_early, 4, "attention_propagate")
    if lsq != esq:
        raise DimensionError("late and early features must agree on batching")
    t_late, t_early = lb.shape[2], eb.shape[2]
    idx = _match_time(t_early, t_late)
    att = spatial_attention_map(lb)
    up = resize_spatial(att.output, eb.shape[3], eb.shape[4])
    gate = up.output[:, idx]                       # (n, t_early, w, h)
    out = eb * (1.0 + gate[:, None])

    def backward(g: Tensor) -> tuple[Tensor, Tensor]:
        gb = g[None] if esq else g
        d_early = gb * (1.0 + gate[:, None])
        d_gate = (gb * eb).sum(axis=1)
        d_up = np.zeros_like(up.output)
        np.add.at(d_up.swapaxes(0, 1), idx, d_gate.swapaxes(0, 1))
        (d_att,) = up.backward(d_up)
        (d_late,) = att.backward(d_att)
        return _restore(d_late, lsq), _restore(d_early, esq)

    return DualResult(_restore(out, esq), backward)


def _pool_factor(hi: tuple[int, int], lo: tuple[int, int]) -> int:
    for factor in range(1, max(hi) + 1):
        if ((hi[0] + factor - 1) // factor, (hi[1] + factor - 1) // factor) == lo:
            return factor
    raise DimensionError(
        f"no integer pooling factor maps spatial extents {hi} onto {lo}"
    )


def cross_scale_aggregate(
    f_hi: Tensor, f_lo: Tensor, weights: Tensor, bias: Tensor
) -> DualResult:
    """Fold a higher-resolution feature into a lower one.

    The high feature is average-pooled down to the low feature's spatial
    extents, projected to its channel count with a 1x1 mix, and added.
    Gradients flow to (f_hi, f_lo, weights, bias).
    """
    hi_space = (f_hi.shape[-2], f_hi.shape[-1])
    lo_space = (f_lo.shape[-2], f_lo.shape[-1])
    if f_hi.shape[-3] != f_lo.shape[-3]:
        raise DimensionError(
            f"temporal extents differ: {f_hi.shape[-3]} vs {f_lo.shape[-3]}"
        )
    factor = _pool_factor(hi_space, lo_space)
    pooled = avg_pool_spatial(f_hi, factor)
    projected = pointwise_conv(pooled.output, weights, bias)
    if projected.output.shape != f_lo.shape:
        raise DimensionError(
            f"projected shape {projected.output.shape} != target {f_lo.shape}"
        )
    out = projected.output + f_lo

    def backward(g: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        d_pooled, dw, db = projected.backward(g)
        (d_hi,) = pooled.backward(d_pooled)
        return d_hi, g.copy(), dw, db

    return DualResult(out, backward)


def fuse(f: Tensor, f_cidc: Tensor, mode: str) -> DualResult:
    """Combine the backbone feature with the aggregated branch feature.

    concat_t stacks along time (channels and space must match), concat_c
    along channels (time and space must match), sum adds equal shapes.
    Gradients flow to (f, f_cidc); concatenated slices split back exactly.
    """
    if mode not in FUSION_MODES:
        raise ArgumentError(f"unknown fusion mode {mode!r}")
    if f.ndim != f_cidc.ndim:
        raise DimensionError("fusion inputs must have equal rank")
    if mode == "sum":
        if f.shape != f_cidc.shape:
            raise DimensionError(f"sum fusion needs equal shapes, got {f.shape} vs {f_cidc.shape}")
        out = f + f_cidc

        def backward_sum(g: Tensor) -> tuple[Tensor, Tensor]:
            return g.copy(), g.copy()

        return DualResult(out, backward_sum)

    axis = -3 if mode == "concat_t" else -4
    lead = f.shape[:axis]
    if (lead != f_cidc.shape[:axis]
            or f.shape[axis + 1 :] != f_cidc.shape[axis + 1 :]):
        raise DimensionError(
            f"{mode} fusion needs matching extents off the joined axis, "
            f"got {f.shape} vs {f_cidc.shape}"
        )
    split = f.shape[axis]
    out = np.concatenate([f, f_cidc], axis=axis)

    def backward_cat(g: Tensor) -> tuple[Tensor, Tensor]:
        taken = np.moveaxis(g, axis, 0)
        first = np.moveaxis(taken[:split], 0, axis).copy()
        second = np.moveaxis(taken[split:], 0, axis).copy()
        return first, second

    return DualResult(out, backward_cat)


def _stage_forward(x: Tensor, cfg: StageConfig, w: Tensor, b: Tensor):
    """conv3x3 + relu; a temporal stride keeps every stride-th frame."""
    if cfg.temporal_stride > 1:
        sub = x[:, :, :: cfg.temporal_stride]
    else:
        sub = x
    conv = spatial_conv3x3(sub, w, b, cfg.spatial_stride)
    act = relu(conv.output)

    def backward(g: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        (dconv,) = act.backward(g)
        dsub, dw, db = conv.backward(dconv)
        if cfg.temporal_stride > 1:
            dx = np.zeros_like(x)
            dx[:, :, :: cfg.temporal_stride] = dsub
        else:
            dx = dsub
        return dx, dw, db

    return act.output, backward


def backbone_forward(clip: Tensor, model: Model) -> list[Tensor]:
    """Stage outputs, highest resolution first."""
    clip_b, squeeze = _with_batch(clip, 4, "backbone_forward")
    outs, _ = _backbone(clip_b, model)
    return [_restore(s, squeeze) for s in outs]


def _backbone(clip: Tensor, model: Model):
    """Stage cascade on an already batched (N, C, T, H, W) clip."""
    x = clip
    outs, vjps = [], []
    for cfg, w, b in zip(model.stages, model.stage_weights, model.stage_biases):
        x, vjp = _stage_forward(x, cfg, w, b)
        outs.append(x)
        vjps.append(vjp)
    return outs, vjps


def _branch_forward(x: Tensor, model: Model, index: int):
    """Run one branch's stacked units; backward yields (dx, named grads)."""
    masked = model.temporal_mode != "non"
    duals = []
    h = x
    for u in model.branch_units[index]:
        if u.bwd is None:
            d = cidc_unit_forward(h, u.fwd, masked=masked)
        else:
            d = bidirectional_cidc(h, u.fwd, u.bwd, masked=masked)
        duals.append(d)
        h = d.output

    def backward(g: Tensor):
        grads: dict[str, Tensor] = {}
        d = g
        for ui in reversed(range(len(duals))):
            parts = duals[ui].backward(d)
            d = parts[0]
            stem = f"branch{index}.unit{ui}"
            grads[f"{stem}.fwd.k"], grads[f"{stem}.fwd.mix_w"], grads[f"{stem}.fwd.mix_b"] = parts[1:4]
            if len(parts) == 7:
                grads[f"{stem}.bwd.k"], grads[f"{stem}.bwd.mix_w"], grads[f"{stem}.bwd.mix_b"] = parts[4:7]
        return d, grads

    return h, backward


def multiscale_cidc_forward(
    clip: Tensor,
    model: Model,
    rng: np.random.Generator | None = None,
    train_flag: bool = False,
) -> DualResult:
    """Full network forward pass producing class logits.

    backward(dlogits) returns (dclip, gradient dict over model.parameters()).
    """
    cb, squeeze = _with_batch(clip, 4, "multiscale_cidc_forward")
    if cb.shape[1] != model.in_channels:
        raise DimensionError(
            f"clip has {cb.shape[1]} channels, model expects {model.in_channels}"
        )
    stages, stage_vjps = _backbone(cb, model)
    late = stages[-1]

    branch_backs = []
    agg_duals = []
    att_duals = []
    if model.temporal_mode == "pool":
        t_late = late.shape[2]
        f_cidc = np.broadcast_to(late.mean(axis=2, keepdims=True), late.shape).copy()
    else:
        gated = []
        for s in stages[:-1]:
            ap = attention_propagate(late, s)
            att_duals.append(ap)
            gated.append(ap.output)
        gated.append(late)
        branch_outs = []
        for i, g_in in enumerate(gated):
            out, back = _branch_forward(g_in, model, i)
            branch_outs.append(out)
            branch_backs.append(back)
        folded = branch_outs[0]
        for i in range(1, len(branch_outs)):
            w, b = model.projections[i - 1]
            agg = cross_scale_aggregate(folded, branch_outs[i], w, b)
            agg_duals.append(agg)
            folded = agg.output
        f_cidc = folded

    fused = fuse(late, f_cidc, model.fusion_mode)
    pooled = global_avg_pool(fused.output)
    dropped = dropout(pooled.output, model.dropout_rate, rng, train_flag)
    logits = linear(dropped.output, model.head_weights, model.head_bias)

    def backward(dlogits: Tensor):
        grads: dict[str, Tensor] = {}
        db = dlogits[None] if squeeze else dlogits
        dvec, grads["head.w"], grads["head.b"] = logits.backward(db)
        (dvec,) = dropped.backward(dvec)
        (dfused,) = pooled.backward(dvec)
        d_late, d_cidc = fused.backward(dfused)
        d_stages = [np.zeros_like(s) for s in stages]
        d_stages[-1] += d_late

        if model.temporal_mode == "pool":
            d_stages[-1] += np.broadcast_to(
                d_cidc.sum(axis=2, keepdims=True) / t_late, late.shape
            )
        else:
            d_branches = [None] * len(branch_backs)
            d_run = d_cidc
            for i in reversed(range(len(agg_duals))):
                d_run, d_lo, dw, dbias = agg_duals[i].backward(d_run)
                d_branches[i + 1] = d_lo
                grads[f"proj{i}.w"] = dw
                grads[f"proj{i}.b"] = dbias
            d_branches[0] = d_run
            for i in reversed(range(len(branch_backs))):
                d_in, bgrads = branch_backs[i](d_branches[i])
                grads.update(bgrads)
                if i == len(branch_backs) - 1:
                    d_stages[-1] += d_in
                else:
                    dl, de = att_duals[i].backward(d_in)
                    d_stages[-1] += dl
                    d_stages[i] += de

        d_x = None
        for i in reversed(range(len(stages))):
            upstream = d_stages[i] if d_x is None else d_stages[i] + d_x
            d_prev, dw, dbias = stage_vjps[i](upstream)
            grads[f"stage{i}.w"] = dw
            grads[f"stage{i}.b"] = dbias
            d_x = d_prev
        return _restore(d_x, squeeze), grads

    return DualResult(_restore(logits.output, squeeze), backward)


def build_model(
    rng: np.random.Generator,
    in_channels: int = 1,
    in_t: int = 8,
    in_size: int = 36,
    stage_channels: tuple[int, ...] = (8, 16, 32),
    spatial_strides: tuple[int, ...] = (2, 2, 2),
    temporal_strides: tuple[int, ...] = (1, 1, 2),
    branch_channels: tuple[int, ...] | None = None,
    unit_count: int = 2,
    fusion_mode: str = "concat_t",
    temporal_mode: str = "bi",
    dropout_rate: float = 0.6,
    n_classes: int = 4,
) -> Model:
    """Construct and initialize the default multi-scale model.

    Branch temporal extents are chosen so every branch emits the deepest
    stage's extent, which keeps cross-scale addition and all three fusion
    modes well-formed. The pooling control replaces the branch stack with a
    temporal mean, and forces temporal stride 1 so its features depend only
    on the multiset of frames (a temporally strided backbone would leak
    frame order through which frames survive).
    """
    if fusion_mode not in FUSION_MODES:
        raise ArgumentError(f"unknown fusion mode {fusion_mode!r}")
    if temporal_mode not in TEMPORAL_MODES:
        raise ArgumentError(f"unknown temporal mode {temporal_mode!r}")
    n_stages = len(stage_channels)
    if not (n_stages == len(spatial_strides) == len(temporal_strides)) or n_stages < 1:
        raise ArgumentError("stage channel/stride tuples must share a positive length")
    if temporal_mode == "pool":
        temporal_strides = tuple(1 for _ in temporal_strides)
    if branch_channels is None:
        branch_channels = tuple(stage_channels)
    if len(branch_channels) != n_stages:
        raise ArgumentError("need one branch channel count per stage")

    stages = []
    t, size = in_t, in_size
    stage_t, stage_size = [], []
    for ch, ss, ts in zip(stage_channels, spatial_strides, temporal_strides):
        t = (t + ts - 1) // ts if ts > 1 else t
        size = (size + ss - 1) // ss
        stages.append(StageConfig(ch, ss, ts))
        stage_t.append(t)
        stage_size.append(size)

    t_eff = stage_t[-1]
    bidirectional = temporal_mode == "bi"
    if bidirectional:
        if t_eff % 2 != 0:
            raise ArgumentError(
                f"bidirectional branches need an even target extent, got {t_eff}"
            )
        t_unit = t_eff // 2
    else:
        t_unit = t_eff

    stage_weights, stage_biases = [], []
    c_prev = in_channels
    for ch in stage_channels:
        bound = np.sqrt(6.0 / (c_prev * 9))
        stage_weights.append(rng.uniform(-bound, bound, size=(ch, c_prev, 3, 3)).astype(DTYPE))
        stage_biases.append(np.zeros(ch, dtype=DTYPE))
        c_prev = ch

    branches: list[BranchConfig] = []
    branch_units: list[list[BranchUnit]] = []
    projections: list[list[Tensor]] = []
    if temporal_mode != "pool":
        for i in range(n_stages):
            cfg = BranchConfig(
                t_in=stage_t[i],
                t_out=t_unit,
                channels=branch_channels[i],
                bidirectional=bidirectional,
                unit_count=unit_count,
            )
            units = []
            c_in = stage_channels[i]
            t_in = cfg.t_in
            for _ in range(unit_count):
                fwd = init_unit_params(rng, c_in, cfg.channels, t_unit, t_in, "forward")
                bwd = (
                    init_unit_params(rng, c_in, cfg.channels, t_unit, t_in, "backward")
                    if bidirectional
                    else None
                )
                units.append(BranchUnit(fwd, bwd))
                c_in = cfg.channels
                t_in = t_eff
            branches.append(cfg)
            branch_units.append(units)
        for i in range(n_stages - 1):
            fan_in = branch_channels[i]
            bound = 1.0 / np.sqrt(fan_in)
            projections.append([
                rng.uniform(-bound, bound, size=(branch_channels[i + 1], fan_in)).astype(DTYPE),
                np.zeros(branch_channels[i + 1], dtype=DTYPE),
            ])

    c_cidc = branch_channels[-1] if temporal_mode != "pool" else stage_channels[-1]
    head_in = _fused_channels(stage_channels[-1], c_cidc, fusion_mode)
    bound = 1.0 / np.sqrt(head_in)
    head_w = rng.uniform(-bound, bound, size=(n_classes, head_in)).astype(DTYPE)
    head_b = np.zeros(n_classes, dtype=DTYPE)

    return Model(
        in_channels=in_channels,
        in_t=in_t,
        in_size=in_size,
        n_classes=n_classes,
        fusion_mode=fusion_mode,
        temporal_mode=temporal_mode,
        dropout_rate=dropout_rate,
        stages=stages,
        stage_weights=stage_weights,
        stage_biases=stage_biases,
        branches=branches,
        branch_units=branch_units,
        projections=projections,
        head_weights=head_w,
        head_bias=head_b,
    )


def _fused_channels(c_backbone: int, c_branch: int, fusion_mode: str) -> int:
    if fusion_mode == "concat_c":
        return c_backbone + c_branch
    if c_branch != c_backbone:
        raise ArgumentError(
            f"{fusion_mode} fusion needs matching channels, got {c_backbone} vs {c_branch}"
        )
    return c_backbone
