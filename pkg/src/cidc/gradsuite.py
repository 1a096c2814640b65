"""Gradient-check suite over every differentiable operation and the full model.

Each named check builds seeded random inputs, runs grad_check against the
operation's analytic backward pass, and reports the max relative error.
Primitive operations must meet 1e-5; the end-to-end model must meet 1e-4.
ReLU inputs are kept away from the kink and dropout randomness is frozen
per check, so central differences probe smooth regions only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network, ops, unit
from .ops import DualResult, GradCheckReport, grad_check

PRIMITIVE_TOL = 1e-5
MODEL_TOL = 1e-4


@dataclass(frozen=True)
class SuiteRow:
    op: str
    seeds: int
    max_rel_error: float
    tolerance: float
    passed: bool
    worst_seed: int
    worst_input: int
    worst_index: int


def _away_from_zero(rng: np.random.Generator, shape, low: float = 0.15, high: float = 1.0):
    """Values with |x| >= low, so ReLU-style kinks stay out of the probe band."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _check_masked_softmax_rows(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    logits = rng.uniform(-2.0, 2.0, size=(5, 5))
    mask = unit.build_directional_mask(5, 5)
    return grad_check(lambda x: ops.masked_softmax_rows(x, mask), [logits])


def _check_normalize_kernel(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    worst = None
    for t_out, t_in in ((4, 4), (2, 4), (4, 8)):
        k = rng.uniform(-1.0, 1.0, size=(3, t_out, t_in))
        mask = unit.build_directional_mask(t_out, t_in)
        rep = grad_check(lambda x: unit.normalize_kernel(x, mask), [k])
        worst = rep if worst is None or rep.max_rel_error > worst.max_rel_error else worst
    return worst


def _check_cidc_apply(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((3, 4, 2, 3))
    w = rng.standard_normal((3, 2, 4))
    return grad_check(unit.cidc_apply, [f, w])


def _unit_check(seed: int, direction: str) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((3, 4, 2, 2))
    k = rng.uniform(-1.0, 1.0, size=(3, 2, 4))
    mw = rng.standard_normal((4, 3))
    mb = rng.standard_normal(4)

    def fn(f_, k_, mw_, mb_):
        return unit.cidc_unit_forward(f_, unit.CIDCParams(k_, mw_, mb_, direction))

    return grad_check(fn, [f, k, mw, mb])


def _check_cidc_unit_forward(seed: int) -> GradCheckReport:
    fwd = _unit_check(seed, "forward")
    bwd = _unit_check(seed, "backward")
    return fwd if fwd.max_rel_error >= bwd.max_rel_error else bwd


def _check_bidirectional_cidc(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((2, 4, 2, 2))
    k_f = rng.uniform(-1.0, 1.0, size=(2, 2, 4))
    k_b = rng.uniform(-1.0, 1.0, size=(2, 2, 4))
    mw_f = rng.standard_normal((3, 2))
    mw_b = rng.standard_normal((3, 2))
    mb_f = rng.standard_normal(3)
    mb_b = rng.standard_normal(3)

    def fn(f_, kf, mwf, mbf, kb, mwb, mbb):
        return unit.bidirectional_cidc(
            f_,
            unit.CIDCParams(kf, mwf, mbf, "forward"),
            unit.CIDCParams(kb, mwb, mbb, "backward"),
        )

    return grad_check(fn, [f, k_f, mw_f, mb_f, k_b, mw_b, mb_b])


def _check_pointwise_conv(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 2, 3, 2))
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    return grad_check(ops.pointwise_conv, [x, w, b])


def _check_spatial_conv3x3(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    worst = None
    for stride in (1, 2):
        x = rng.standard_normal((2, 2, 5, 4))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        rep = grad_check(lambda *a: ops.spatial_conv3x3(*a, stride=stride), [x, w, b])
        worst = rep if worst is None or rep.max_rel_error > worst.max_rel_error else worst
    return worst


def _check_relu(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = _away_from_zero(rng, (4, 5))
    return grad_check(ops.relu, [x])


def _check_avg_pool_spatial(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    worst = None
    for extent in (6, 5):
        x = rng.standard_normal((2, 2, extent, extent))
        rep = grad_check(lambda a: ops.avg_pool_spatial(a, 2), [x])
        worst = rep if worst is None or rep.max_rel_error > worst.max_rel_error else worst
    return worst


def _check_global_avg_pool(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return grad_check(ops.global_avg_pool, [rng.standard_normal((3, 2, 4, 4))])


def _check_dropout(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 6))

    def fn(x_):
        return ops.dropout(x_, 0.6, np.random.default_rng(seed + 1), True)

    return grad_check(fn, [x])


def _check_linear(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(5)
    w = rng.standard_normal((3, 5))
    b = rng.standard_normal(3)
    return grad_check(ops.linear, [x, w, b])


def _check_softmax_cross_entropy(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    logits = rng.uniform(-2.0, 2.0, size=6)
    return grad_check(lambda x: ops.softmax_cross_entropy(x, seed % 6), [logits])


def _check_flip_time(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return grad_check(ops.flip_time, [rng.standard_normal((2, 3, 2, 2))])


def _check_resize_spatial(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 4, 5))
    return grad_check(lambda a: ops.resize_spatial(a, 7, 3), [x])


def _check_spatial_attention_map(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return grad_check(network.spatial_attention_map, [rng.standard_normal((3, 2, 4, 4))])


def _check_attention_propagate(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    late = rng.standard_normal((4, 2, 3, 3))
    early = rng.standard_normal((2, 4, 6, 6))
    return grad_check(network.attention_propagate, [late, early])


def _check_cross_scale_aggregate(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    hi = rng.standard_normal((2, 3, 6, 6))
    lo = rng.standard_normal((3, 3, 3, 3))
    w = rng.standard_normal((3, 2))
    b = rng.standard_normal(3)
    return grad_check(network.cross_scale_aggregate, [hi, lo, w, b])


def _check_fuse(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    worst = None
    for mode in network.FUSION_MODES:
        f = rng.standard_normal((3, 2, 2, 2))
        g = rng.standard_normal((3, 2, 2, 2))
        rep = grad_check(lambda a, b: network.fuse(a, b, mode), [f, g])
        worst = rep if worst is None or rep.max_rel_error > worst.max_rel_error else worst
    return worst


def small_model(seed: int) -> network.Model:
    """A tiny full model with parameters re-drawn at O(1) scale so softmax
    spreads are well away from finite-difference step sizes."""
    rng = np.random.default_rng(seed)
    model = network.build_model(
        rng,
        in_channels=2,
        in_t=4,
        in_size=9,
        stage_channels=(3, 4, 5),
        spatial_strides=(2, 2, 1),
        temporal_strides=(1, 1, 2),
        unit_count=2,
        fusion_mode="concat_t",
        temporal_mode="bi",
        dropout_rate=0.6,
        n_classes=4,
    )
    for value in model.parameters().values():
        value[...] = rng.uniform(-0.5, 0.5, size=value.shape)
    return model


def _check_model(seed: int) -> GradCheckReport:
    """Loss gradient w.r.t. every parameter of a full (tiny) model."""
    rng = np.random.default_rng(seed)
    model = small_model(seed)
    params = model.parameters()
    names = list(params)
    clip = rng.uniform(0.0, 1.0, size=(2, 4, 9, 9))
    label = seed % 4

    def fn(*values):
        current = model.parameters()
        for name, value in zip(names, values):
            np.copyto(current[name], value)
        net = network.multiscale_cidc_forward(clip, model, None, False)
        ce = ops.softmax_cross_entropy(net.output, label)

        def backward(g):
            (dlogits,) = ce.backward(g)
            _, grads = net.backward(dlogits)
            return tuple(grads[n] for n in names)

        return DualResult(ce.output, backward)

    return grad_check(fn, list(params.values()), tolerance=MODEL_TOL)


PRIMITIVE_CHECKS = {
    "masked_softmax_rows": _check_masked_softmax_rows,
    "normalize_kernel": _check_normalize_kernel,
    "cidc_apply": _check_cidc_apply,
    "cidc_unit_forward": _check_cidc_unit_forward,
    "bidirectional_cidc": _check_bidirectional_cidc,
    "pointwise_conv": _check_pointwise_conv,
    "spatial_conv3x3": _check_spatial_conv3x3,
    "relu": _check_relu,
    "avg_pool_spatial": _check_avg_pool_spatial,
    "global_avg_pool": _check_global_avg_pool,
    "dropout": _check_dropout,
    "linear": _check_linear,
    "softmax_cross_entropy": _check_softmax_cross_entropy,
    "flip_time": _check_flip_time,
    "resize_spatial": _check_resize_spatial,
    "spatial_attention_map": _check_spatial_attention_map,
    "attention_propagate": _check_attention_propagate,
    "cross_scale_aggregate": _check_cross_scale_aggregate,
    "fuse": _check_fuse,
}

MODEL_CHECK = "model"
ALL_CHECKS = (*PRIMITIVE_CHECKS, MODEL_CHECK)


def run_suite(
    op_names: list[str] | None = None,
    seeds_per_op: int = 20,
    model_seeds: int = 3,
    base_seed: int = 0,
) -> list[SuiteRow]:
    """Run the selected checks and collect one row per operation."""
    names = list(op_names) if op_names else list(ALL_CHECKS)
    unknown = [n for n in names if n not in ALL_CHECKS]
    if unknown:
        raise ValueError(f"unknown ops: {unknown}; choose from {sorted(ALL_CHECKS)}")
    rows = []
    for name in names:
        if name == MODEL_CHECK:
            check, tol, n_seeds = _check_model, MODEL_TOL, model_seeds
        else:
            check, tol, n_seeds = PRIMITIVE_CHECKS[name], PRIMITIVE_TOL, seeds_per_op
        worst = None
        worst_seed = base_seed
        for s in range(n_seeds):
            rep = check(base_seed + s)
            if worst is None or rep.max_rel_error > worst.max_rel_error:
                worst = rep
                worst_seed = base_seed + s
        rows.append(
            SuiteRow(
                op=name,
                seeds=n_seeds,
                max_rel_error=float(worst.max_rel_error),
                tolerance=tol,
                passed=worst.max_rel_error <= tol,
                worst_seed=worst_seed,
                worst_input=worst.worst_input,
                worst_index=worst.worst_index,
            )
        )
    return rows
