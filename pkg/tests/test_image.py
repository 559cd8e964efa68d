import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mammoreg.image import (
    DisplacementField,
    Image,
    Mask,
    flip_horizontal,
    gaussian_kernel,
    gaussian_smooth,
    gradient,
    histogram_match,
    resample,
    resample_field,
    sample_bilinear,
    warp,
)

unit_floats = st.floats(0.0, 1.0, allow_nan=False)


def small_images(min_side=1, max_side=12):
    shapes = st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=unit_floats)).map(
        lambda a: Image(a, (1.0, 1.0))
    )


class TestImageModel:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Image(np.array([[1.5]]))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Image(np.array([[np.nan]]))

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            Image(np.zeros((2, 2)), (0.0, 1.0))

    def test_data_is_read_only(self):
        img = Image(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            img.data[0, 0] = 1.0

    def test_default_spacing(self):
        assert Image(np.zeros((1, 1))).spacing == (0.05, 0.05)

    def test_field_rejects_nonfinite(self):
        vec = np.zeros((2, 2, 2))
        vec[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            DisplacementField(vec)


class TestSampleBilinear:
    def test_pixel_center_identity(self):
        rng = np.random.default_rng(0)
        img = Image(rng.uniform(size=(5, 7)), (0.5, 2.0))
        for j in range(5):
            for i in range(7):
                assert sample_bilinear(img, i * 0.5, j * 2.0) == img.data[j, i]

    def test_midpoint(self):
        img = Image(np.array([[0.0, 1.0]]), (1.0, 1.0))
        assert sample_bilinear(img, 0.5, 0.0) == 0.5

    def test_outside_is_background(self):
        img = Image(np.ones((3, 3)), (1.0, 1.0))
        assert sample_bilinear(img, -3.0, 1.0) == 0.0
        assert sample_bilinear(img, 1.0, 2.0001) == 0.0

    def test_vectorized(self):
        img = Image(np.array([[0.0, 1.0], [1.0, 0.0]]), (1.0, 1.0))
        out = sample_bilinear(img, np.array([0.5, 0.0]), np.array([0.5, 1.0]))
        np.testing.assert_allclose(out, [0.5, 1.0])


class TestResample:
    def test_same_dims_identity(self):
        img = Image(np.random.default_rng(1).uniform(size=(6, 9)), (0.3, 0.3))
        out = resample(img, 9, 6)
        np.testing.assert_allclose(out.data, img.data, atol=1e-6)

    @pytest.mark.parametrize("dims", [(1, 1), (3, 17), (40, 25)])
    def test_constant_preserved(self, dims):
        img = Image(np.full((10, 12), 0.37), (0.4, 0.4))
        out = resample(img, *dims)
        np.testing.assert_allclose(out.data, 0.37, atol=1e-12)

    def test_full_size_mammogram_working_spacing(self):
        img = Image(np.zeros((2728, 4376)), (0.05, 0.05))
        out = resample(img, 219, 136)
        # extent / width: 0.05 * 4376 / 219
        assert out.spacing[0] == pytest.approx(0.05 * 4376 / 219)
        assert out.spacing[0] == pytest.approx(0.999, abs=5e-4)
        assert out.width * out.spacing[0] == pytest.approx(img.width * img.spacing[0])

    def test_zero_dimension_rejected(self):
        with pytest.raises(ValueError):
            resample(Image(np.zeros((2, 2))), 0, 3)


class TestResampleField:
    def test_constant_field_upsampled(self):
        img = Image(np.zeros((4, 5)), (1.0, 1.0))
        fld = DisplacementField.constant_like(img, 1.0, -2.0)
        up = resample_field(fld, 50, 40)
        assert np.all(up.dx == 1.0) and np.all(up.dy == -2.0)

    def test_zero_field(self):
        fld = DisplacementField(np.zeros((2, 3, 3)), (1.0, 1.0))
        assert not np.any(resample_field(fld, 7, 2).vectors)

    def test_linear_interp_by_hand(self):
        vec = np.zeros((2, 1, 2))
        vec[0, 0] = [0.0, 2.0]
        out = resample_field(DisplacementField(vec, (1.0, 1.0)), 3, 1)
        np.testing.assert_allclose(out.dx[0], [0.0, 1.0, 2.0])

    @given(st.integers(1, 30), st.integers(1, 30), st.floats(-5, 5), st.floats(-5, 5))
    def test_constant_any_dims(self, w, h, cx, cy):
        img = Image(np.zeros((3, 4)), (0.7, 0.2))
        out = resample_field(DisplacementField.constant_like(img, cx, cy), w, h)
        assert np.all(out.dx == cx) and np.all(out.dy == cy)


class TestGradient:
    def test_constant_image(self):
        g = gradient(Image(np.full((4, 4), 0.3), (1.0, 1.0)))
        assert not np.any(g.vectors)

    def test_ramp_by_hand(self):
        g = gradient(Image(np.array([[0.0, 0.5, 1.0], [0.0, 0.5, 1.0]]), (1.0, 1.0)))
        np.testing.assert_allclose(g.dx[0], [0.5, 0.5, 0.5])
        np.testing.assert_allclose(g.dy, 0.0)

    def test_spacing_scaling(self):
        data = np.tile(np.linspace(0, 1, 6), (3, 1))
        g1 = gradient(Image(data, (1.0, 1.0)))
        g2 = gradient(Image(data, (0.5, 1.0)))
        np.testing.assert_allclose(g2.dx, 2 * g1.dx)

    def test_ramp_is_spatially_constant(self):
        data = np.tile(np.linspace(0.1, 0.9, 20), (10, 1)).T  # ramp along y
        g = gradient(Image(data, (0.3, 0.7)))
        interior = g.dy[1:-1, 1:-1]
        assert np.ptp(interior) <= 1e-9

    def test_degenerate_axis(self):
        with pytest.raises(ValueError):
            gradient(Image(np.zeros((1, 5))))


class TestWarp:
    @given(small_images())
    def test_zero_field_is_exact_identity(self, img):
        assert warp(img, DisplacementField.zeros_like(img)) == img

    def test_one_pixel_shift(self):
        data = np.arange(12, dtype=float).reshape(3, 4) / 11.0
        img = Image(data, (0.25, 1.0))
        out = warp(img, DisplacementField.constant_like(img, 0.25, 0.0))
        expected = np.zeros_like(data)
        expected[:, :-1] = data[:, 1:]
        np.testing.assert_allclose(out.data, expected, atol=1e-15)

    def test_out_of_domain_field(self):
        img = Image(np.ones((4, 4)), (1.0, 1.0))
        out = warp(img, DisplacementField.constant_like(img, 100.0, 0.0))
        assert not np.any(out.data)

    def test_dim_mismatch(self):
        img = Image(np.ones((4, 4)))
        with pytest.raises(ValueError):
            warp(img, DisplacementField(np.zeros((2, 3, 4))))


class TestGaussianSmooth:
    def test_sigma_zero_identity(self):
        fld = DisplacementField(np.random.default_rng(2).normal(size=(2, 5, 5)))
        assert gaussian_smooth(fld, 0.0) == fld

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.5])
    def test_constant_unchanged(self, sigma):
        img = Image(np.zeros((9, 11)))
        fld = DisplacementField.constant_like(img, 0.7, -1.3)
        out = gaussian_smooth(fld, sigma)
        np.testing.assert_allclose(out.vectors, fld.vectors, atol=1e-12)

    def test_impulse_center_weight(self):
        # Oracle: explicit 2D kernel from the 1D formula.
        radius = 3
        x = np.arange(-radius, radius + 1)
        k = np.exp(-0.5 * x**2)
        k /= k.sum()
        vec = np.zeros((2, 15, 15))
        vec[0, 7, 7] = 1.0
        out = gaussian_smooth(DisplacementField(vec, (1.0, 1.0)), 1.0)
        assert out.dx[7, 7] == pytest.approx(k[radius] ** 2, rel=1e-12)
        np.testing.assert_allclose(out.dx[4:11, 4:11], np.outer(k, k), atol=1e-15)

    @pytest.mark.parametrize("sigma", [0.3, 1.0, 1.7, 4.0])
    def test_kernel_normalized(self, sigma):
        k = gaussian_kernel(sigma)
        assert abs(k.sum() - 1.0) <= 1e-12
        assert k.size == 2 * math.ceil(3 * sigma) + 1

    @given(arrays(np.float64, (2, 8, 9), elements=st.floats(-10, 10)), st.floats(0.1, 3.0))
    def test_max_norm_not_increased(self, vec, sigma):
        out = gaussian_smooth(DisplacementField(vec), sigma)
        for c in range(2):
            assert np.abs(out.vectors[c]).max() <= np.abs(vec[c]).max() + 1e-12

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            gaussian_smooth(DisplacementField(np.zeros((2, 3, 3))), -1.0)


class TestHistogramMatch:
    def _image(self, seed=3):
        rng = np.random.default_rng(seed)
        data = np.zeros((40, 40))
        data[5:35, 5:35] = rng.uniform(0.3, 0.9, size=(30, 30))
        return Image(data, (1.0, 1.0))

    def test_identity(self):
        img = self._image()
        out = histogram_match(img, img)
        np.testing.assert_allclose(out.data, img.data, atol=1e-6)

    def test_half_scaled_moving(self):
        ref = self._image()
        moving = ref.with_data(ref.data * 0.5)
        out = histogram_match(moving, ref, levels=1024, landmarks=7)
        # Oracle: sorted foreground values compared quantile by quantile.
        fg_ref = np.sort(ref.data[ref.data > ref.data.mean()])
        fg_out = np.sort(out.data[out.data > out.data.mean()])
        qs = np.linspace(0, 1, 9)
        bin_width = (fg_ref.max() - fg_ref.min()) / 1024
        np.testing.assert_allclose(np.quantile(fg_out, qs), np.quantile(fg_ref, qs), atol=bin_width)

    def test_constant_reference_foreground(self):
        ref = Image(np.where(np.arange(100).reshape(10, 10) > 50, 0.7, 0.0))
        moving = self._image()
        assert histogram_match(moving, ref) is moving

    def test_bad_args(self):
        img = self._image()
        with pytest.raises(ValueError):
            histogram_match(img, img, levels=1)
        with pytest.raises(ValueError):
            histogram_match(img, img, levels=8, landmarks=9)


class TestFlip:
    @given(small_images())
    def test_involution(self, img):
        assert flip_horizontal(flip_horizontal(img)) == img

    def test_pair(self):
        out = flip_horizontal(Image(np.array([[0.2, 0.8]]), (0.3, 0.4)))
        np.testing.assert_array_equal(out.data, [[0.8, 0.2]])
        assert out.spacing == (0.3, 0.4)

    def test_mask(self):
        m = Mask(np.array([[True, False, False]]))
        assert flip_horizontal(m) == Mask(np.array([[False, False, True]]))
