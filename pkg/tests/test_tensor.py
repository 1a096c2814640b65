import numpy as np
import pytest

from cidc.errors import ArgumentError, DimensionError
from cidc.tensor import bilinear_resize_2d, flip_axis, resize_weights, tensor_create

from oracles import resize_oracle


class TestTensorCreate:
    def test_scalar_fill(self):
        x = tensor_create((2, 3), 1.5)
        assert x.shape == (2, 3)
        assert x.dtype == np.float64
        assert np.all(x == 1.5)

    def test_list_fill_row_major(self):
        x = tensor_create((2, 2), [1.0, 2.0, 3.0, 4.0])
        assert x[0, 0] == 1.0 and x[0, 1] == 2.0 and x[1, 0] == 3.0 and x[1, 1] == 4.0

    def test_default_fill_is_zero(self):
        assert np.all(tensor_create((4,)) == 0.0)

    @pytest.mark.parametrize("shape", [(), (0,), (2, -1), (2, 0, 3)])
    def test_bad_shapes(self, shape):
        with pytest.raises(ArgumentError):
            tensor_create(shape)

    def test_fill_length_mismatch(self):
        with pytest.raises(DimensionError):
            tensor_create((2, 2), [1.0, 2.0, 3.0])


class TestFlipAxis:
    def test_flip_matches_reversed_indexing(self):
        x = np.arange(24, dtype=float).reshape(2, 3, 4)
        assert np.array_equal(flip_axis(x, 1), x[:, ::-1])

    def test_double_flip_is_identity(self):
        x = np.random.default_rng(0).standard_normal((3, 4, 5))
        assert np.array_equal(flip_axis(flip_axis(x, 2), 2), x)

    def test_returns_a_copy(self):
        x = np.ones((2, 2))
        y = flip_axis(x, 0)
        y[0, 0] = 7.0
        assert x[0, 0] == 1.0

    @pytest.mark.parametrize("axis", [-1, 3])
    def test_axis_out_of_range(self, axis):
        with pytest.raises(ArgumentError):
            flip_axis(np.zeros((2, 2, 2)), axis)


class TestResizeWeights:
    def test_rows_sum_to_one(self):
        for n_in, n_out in [(4, 7), (7, 4), (1, 5), (5, 1), (3, 3)]:
            w = resize_weights(n_in, n_out)
            assert w.shape == (n_out, n_in)
            assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_identity_when_extents_match(self):
        assert np.array_equal(resize_weights(5, 5), np.eye(5))

    def test_degenerate_input_axis(self):
        w = resize_weights(1, 4)
        assert np.array_equal(w, np.ones((4, 1)))


class TestBilinearResize:
    @pytest.mark.parametrize("shape,out", [((4, 4), (2, 4)), ((4, 8), (8, 4)), ((3, 5), (7, 2)), ((2, 2), (5, 5))])
    def test_matches_loop_oracle(self, shape, out):
        rng = np.random.default_rng(hash(shape + out) % 2**32)
        x = rng.standard_normal(shape)
        got = bilinear_resize_2d(x, *out)
        want = resize_oracle(x, *out)
        assert got.shape == out
        assert np.allclose(got, want, atol=1e-12)

    def test_same_extents_bit_identical(self):
        x = np.random.default_rng(3).standard_normal((6, 7))
        y = bilinear_resize_2d(x, 6, 7)
        assert np.array_equal(y, x)
        assert y is not x

    def test_rejects_non_2d(self):
        with pytest.raises(DimensionError):
            bilinear_resize_2d(np.zeros((2, 2, 2)), 2, 2)

    def test_corner_values_preserved(self):
        x = np.random.default_rng(4).standard_normal((5, 6))
        y = bilinear_resize_2d(x, 9, 11)
        assert y[0, 0] == pytest.approx(x[0, 0], abs=1e-12)
        assert y[-1, -1] == pytest.approx(x[-1, -1], abs=1e-12)
        assert y[0, -1] == pytest.approx(x[0, -1], abs=1e-12)
        assert y[-1, 0] == pytest.approx(x[-1, 0], abs=1e-12)
