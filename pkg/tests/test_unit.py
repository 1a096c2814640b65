import numpy as np
import pytest

from cidc.errors import ArgumentError, DegenerateMaskError, DimensionError
from cidc.unit import (
    CIDCParams,
    bidirectional_cidc,
    build_directional_mask,
    cidc_apply,
    cidc_unit_forward,
    init_unit_params,
    normalize_kernel,
    zero_mask,
)

from oracles import cidc_apply_oracle, mask_oracle, normalize_oracle, unit_oracle

RNG = np.random.default_rng


def params_for(rng, c_in, c_out, t_out, t_in, direction="forward") -> CIDCParams:
    """O(1)-scale parameters; init_unit_params' tiny kernel is a training
    choice, not what we want for numeric tests."""
    return CIDCParams(
        rng.uniform(-1.0, 1.0, (c_in, t_out, t_in)),
        rng.standard_normal((c_out, c_in)),
        rng.standard_normal(c_out),
        direction,
    )


class TestDirectionalMask:
    @pytest.mark.parametrize("t", range(1, 17))
    def test_square_is_strict_upper_triangle(self, t):
        want = np.triu(np.ones((t, t), dtype=np.uint8), k=1)
        assert np.array_equal(build_directional_mask(t, t), want)

    def test_frozen_2x4(self):
        want = np.array([[0, 1, 1, 1], [0, 0, 0, 0]], dtype=np.uint8)
        assert np.array_equal(build_directional_mask(2, 4), want)

    @pytest.mark.parametrize("shape", [(2, 4), (4, 8), (8, 4), (3, 5), (5, 3)])
    def test_rectangular_matches_resize_oracle(self, shape):
        assert np.array_equal(build_directional_mask(*shape), mask_oracle(*shape))

    @pytest.mark.parametrize("t", range(2, 9))
    def test_progressive_context_support(self, t):
        # Output step s may see exactly input steps 0..s when extents match.
        mask = build_directional_mask(t, t)
        for s in range(t):
            support = np.flatnonzero(mask[s] == 0)
            assert np.array_equal(support, np.arange(s + 1))

    def test_last_row_sees_everything(self):
        for t_out, t_in in [(4, 4), (2, 4), (4, 8), (8, 4)]:
            mask = build_directional_mask(t_out, t_in)
            assert not mask[-1].any()

    def test_cached_and_immutable(self):
        a = build_directional_mask(4, 4)
        b = build_directional_mask(4, 4)
        assert a is b
        with pytest.raises(ValueError):
            a[0, 0] = 1

    @pytest.mark.parametrize("shape", [(0, 4), (4, 0), (-1, 2)])
    def test_bad_extents(self, shape):
        with pytest.raises(ArgumentError):
            build_directional_mask(*shape)

    def test_zero_mask_allows_everything(self):
        m = zero_mask(3, 5)
        assert m.shape == (3, 5)
        assert not m.any()


class TestNormalizeKernel:
    def test_frozen_zero_kernel_3x3(self):
        k = np.zeros((1, 3, 3))
        out = normalize_kernel(k, build_directional_mask(3, 3)).output
        want = np.array([[[1.0, 0.0, 0.0], [-0.5, -0.5, 0.0], [-1.0, -1.0, -1.0]]])
        assert np.allclose(out, want, atol=1e-12)

    @pytest.mark.parametrize("shape", [(4, 4), (2, 4), (4, 8)])
    def test_matches_loop_oracle(self, shape):
        rng = RNG(sum(shape))
        k = rng.uniform(-2.0, 2.0, (3, *shape))
        mask = build_directional_mask(*shape)
        got = normalize_kernel(k, mask).output
        assert np.allclose(got, normalize_oracle(k, np.asarray(mask)), atol=1e-12)

    def test_masked_weights_exactly_zero(self):
        rng = RNG(7)
        mask = build_directional_mask(4, 4)
        for _ in range(50):
            out = normalize_kernel(rng.uniform(-3, 3, (2, 4, 4)), mask).output
            assert np.all(out[:, np.asarray(mask) == 1] == 0.0)

    def test_unmasked_weights_within_unit_interval(self):
        rng = RNG(8)
        mask = build_directional_mask(4, 4)
        keep = np.asarray(mask) == 0
        for _ in range(50):
            out = normalize_kernel(rng.uniform(-3, 3, (2, 4, 4)), mask).output
            vals = out[:, keep]
            assert vals.min() >= -1.0 - 1e-12 and vals.max() <= 1.0 + 1e-12
            # The rescale pins the channel extremes to the interval ends.
            assert np.allclose(vals.min(axis=1), -1.0) and np.allclose(vals.max(axis=1), 1.0)

    def test_degenerate_span_skips_rescale(self):
        # Two equal logits in one row: softmax is exactly uniform, the span
        # is zero, and the values pass through unrescaled.
        k = np.full((1, 1, 2), 0.37)
        out = normalize_kernel(k, zero_mask(1, 2)).output
        assert np.allclose(out, [[[0.5, 0.5]]], atol=1e-15)

    def test_fully_masked_row_raises(self):
        mask = np.array([[1, 1], [0, 0]], dtype=np.uint8)
        with pytest.raises(DegenerateMaskError):
            normalize_kernel(np.zeros((1, 2, 2)), mask)

    def test_kernel_shape_validation(self):
        with pytest.raises(DimensionError):
            normalize_kernel(np.zeros((2, 2)), zero_mask(2, 2))
        with pytest.raises(DimensionError):
            normalize_kernel(np.zeros((1, 2, 3)), zero_mask(2, 2))


class TestCidcApply:
    def test_matches_loop_oracle(self):
        rng = RNG(9)
        f = rng.standard_normal((3, 4, 2, 5))
        w = rng.standard_normal((3, 2, 4))
        assert np.allclose(cidc_apply(f, w).output, cidc_apply_oracle(f, w), atol=1e-12)

    def test_channels_do_not_mix(self):
        rng = RNG(10)
        f = rng.standard_normal((2, 3, 2, 2))
        w = rng.standard_normal((2, 3, 3))
        base = cidc_apply(f, w).output
        bumped = f.copy()
        bumped[1] += 100.0
        out = cidc_apply(bumped, w).output
        assert np.array_equal(out[0], base[0])
        assert not np.allclose(out[1], base[1])

    def test_identity_weights(self):
        f = RNG(11).standard_normal((2, 3, 2, 2))
        w = np.broadcast_to(np.eye(3), (2, 3, 3)).copy()
        assert np.allclose(cidc_apply(f, w).output, f, atol=1e-15)

    def test_batch_axis_equals_per_clip(self):
        rng = RNG(12)
        f = rng.standard_normal((4, 2, 3, 2, 2))
        w = rng.standard_normal((2, 2, 3))
        batched = cidc_apply(f, w).output
        singles = np.stack([cidc_apply(f[i], w).output for i in range(4)])
        assert np.array_equal(batched, singles)


class TestUnitForward:
    @pytest.mark.parametrize("direction", ["forward", "backward"])
    @pytest.mark.parametrize("masked", [True, False])
    def test_matches_composed_oracle(self, direction, masked):
        rng = RNG(13)
        f = rng.standard_normal((3, 4, 2, 2))
        p = params_for(rng, 3, 5, 4, 4, direction)
        got = cidc_unit_forward(f, p, masked).output
        want = unit_oracle(f, p.k, p.mix_weights, p.mix_bias, direction, masked)
        assert got.shape == (5, 4, 2, 2)
        assert np.allclose(got, want, atol=1e-12)

    def test_forward_causality_spot_check(self):
        # Perturbing a later frame must leave earlier outputs bit-identical.
        rng = RNG(14)
        f = rng.standard_normal((2, 4, 3, 3))
        p = params_for(rng, 2, 2, 4, 4)
        base = cidc_unit_forward(f, p).output
        poked = f.copy()
        poked[:, 3] += rng.standard_normal((2, 3, 3))
        out = cidc_unit_forward(poked, p).output
        assert np.array_equal(out[:, :3], base[:, :3])

    def test_backward_direction_mirrors_forward(self):
        # A backward unit on a clip equals the forward unit on the reversed
        # clip, reversed back (same parameters).
        rng = RNG(15)
        f = rng.standard_normal((2, 4, 2, 2))
        p_f = params_for(rng, 2, 3, 4, 4, "forward")
        p_b = CIDCParams(p_f.k, p_f.mix_weights, p_f.mix_bias, "backward")
        via_backward = cidc_unit_forward(f, p_b).output
        via_flips = cidc_unit_forward(f[:, ::-1].copy(), p_f).output[:, ::-1]
        assert np.array_equal(via_backward, via_flips)

    def test_temporal_downsampling_shape(self):
        rng = RNG(16)
        f = rng.standard_normal((2, 8, 3, 3))
        p = params_for(rng, 2, 4, 2, 8)
        assert cidc_unit_forward(f, p).output.shape == (4, 2, 3, 3)

    def test_direction_validation(self):
        p = params_for(RNG(17), 2, 2, 4, 4, "sideways")
        with pytest.raises(ArgumentError):
            cidc_unit_forward(np.zeros((2, 4, 2, 2)), p)

    def test_feature_kernel_compatibility(self):
        p = params_for(RNG(18), 3, 2, 4, 4)
        with pytest.raises(DimensionError):
            cidc_unit_forward(np.zeros((2, 4, 2, 2)), p)  # wrong channels
        with pytest.raises(DimensionError):
            cidc_unit_forward(np.zeros((3, 5, 2, 2)), p)  # wrong time


class TestBidirectional:
    def test_first_half_is_forward_unit(self):
        rng = RNG(19)
        f = rng.standard_normal((2, 4, 3, 3))
        p_f = params_for(rng, 2, 3, 2, 4, "forward")
        p_b = params_for(rng, 2, 3, 2, 4, "backward")
        both = bidirectional_cidc(f, p_f, p_b).output
        fwd = cidc_unit_forward(f, p_f).output
        assert both.shape == (3, 4, 3, 3)
        assert np.array_equal(both[:, :2], fwd)

    def test_second_half_is_backward_unit(self):
        rng = RNG(20)
        f = rng.standard_normal((2, 4, 3, 3))
        p_f = params_for(rng, 2, 3, 2, 4, "forward")
        p_b = params_for(rng, 2, 3, 2, 4, "backward")
        both = bidirectional_cidc(f, p_f, p_b).output
        bwd = cidc_unit_forward(f, p_b).output
        assert np.array_equal(both[:, 2:], bwd)

    def test_direction_roles_enforced(self):
        rng = RNG(21)
        p_f = params_for(rng, 2, 3, 2, 4, "forward")
        p_b = params_for(rng, 2, 3, 2, 4, "backward")
        f = np.zeros((2, 4, 2, 2))
        with pytest.raises(ArgumentError):
            bidirectional_cidc(f, p_b, p_b)
        with pytest.raises(ArgumentError):
            bidirectional_cidc(f, p_f, p_f)


class TestInitUnitParams:
    def test_shapes_and_ranges(self):
        p = init_unit_params(RNG(22), 8, 6, 2, 4)
        assert p.k.shape == (8, 2, 4)
        assert p.mix_weights.shape == (6, 8)
        assert p.mix_bias.shape == (6,)
        assert np.all(np.abs(p.k) <= 0.01)
        assert np.all(np.abs(p.mix_weights) <= 1.0 / np.sqrt(8))
        assert np.all(p.mix_bias == 0.0)
        assert p.direction == "forward"
