import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slidepair.errors import DegenerateMask, SingularTransform
from slidepair.imaging import (DisplacementField, RasterImage, TissueMask, apply_affine, downsample,
                               downsample_size, otsu_bin, resize_area, tissue_mask, to_grayscale, warp)
from slidepair.transform import AffineTransform2D, compose

from conftest import texture


def rgb(arr):
    return RasterImage(np.asarray(arr, dtype=np.float64))


class TestRasterImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            RasterImage(np.full((4, 4, 1), 1.5))

    def test_rejects_nan(self):
        d = np.zeros((4, 4, 1))
        d[0, 0] = np.nan
        with pytest.raises(ValueError):
            RasterImage(d)

    def test_from_uint8_scales(self):
        img = RasterImage.from_uint8(np.array([[0, 255], [51, 102]], dtype=np.uint8))
        assert img.data[..., 0].tolist() == [[0.0, 1.0], [0.2, 0.4]]

    def test_data_is_read_only(self):
        img = rgb(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0

    def test_field_must_be_finite(self):
        v = np.zeros((3, 3, 2))
        v[1, 1, 0] = np.inf
        with pytest.raises(ValueError):
            DisplacementField(v)


class TestGrayscale:
    def test_white(self):
        g = to_grayscale(rgb(np.ones((5, 7, 3))))
        assert g.channels == 1
        assert np.all(g.data == 1.0)

    def test_red(self):
        d = np.zeros((4, 4, 3))
        d[..., 0] = 1
        assert np.all(to_grayscale(rgb(d)).data == 0.299)

    def test_per_pixel_oracle(self):
        d = np.random.default_rng(0).random((8, 8, 3))
        g = to_grayscale(rgb(d)).data[..., 0]
        for i in range(8):
            for j in range(8):
                r, gg, b = d[i, j]
                assert g[i, j] == pytest.approx(0.299 * r + 0.587 * gg + 0.114 * b, abs=1e-15)

    def test_gray_passthrough(self):
        img = texture(1)
        assert to_grayscale(img) is img


class TestTissueMask:
    def test_white_is_degenerate(self):
        with pytest.raises(DegenerateMask):
            tissue_mask(rgb(np.ones((32, 32, 3))))

    def test_dark_block_fixed(self):
        d = np.ones((200, 200, 3))
        d[50:150, 60:160] = 0.2
        m = tissue_mask(rgb(d), method="fixed", threshold=0.5)
        expect = np.zeros((200, 200), bool)
        expect[50:150, 60:160] = True
        assert np.array_equal(m.bits, expect)

    @pytest.mark.parametrize("seed", range(5))
    def test_otsu_matches_exhaustive_search(self, seed):
        rng = np.random.default_rng(seed)
        vals = np.clip(np.concatenate([rng.normal(0.2, 0.05, 3000), rng.normal(0.7, 0.08, 2000)]), 0, 1)
        bins = np.minimum((vals * 256).astype(int), 255)
        best, best_k = -1.0, None
        for k in range(256):
            lo, hi = vals[bins <= k], vals[bins > k]
            if len(lo) == 0 or len(hi) == 0:
                continue
            # between-class variance on bin indices
            b_lo, b_hi = bins[bins <= k], bins[bins > k]
            v = len(b_lo) * len(b_hi) * (b_lo.mean() - b_hi.mean()) ** 2
            if v > best + 1e-9 * abs(best):
                best, best_k = v, k
        assert otsu_bin(vals) == best_k

    def test_speckle_removed(self):
        d = np.ones((64, 64, 3))
        d[20:40, 20:40] = 0.1
        d[5, 5] = 0.0
        m = tissue_mask(rgb(d), method="fixed")
        assert not m.bits[5, 5]
        assert m.count == 400

    def test_edge_tissue_kept(self):
        d = np.ones((32, 32, 1))
        d[:, :10] = 0.0
        m = tissue_mask(RasterImage(d), method="fixed")
        assert m.bits[:, :10].all() and not m.bits[:, 10:].any()

    def test_idempotent_on_binary_rendering(self):
        img = texture(3, 96, sigma=6.0)
        m1 = tissue_mask(img)
        rendered = RasterImage(np.where(m1.bits, 0.0, 1.0)[..., None])
        m2 = tissue_mask(rendered)
        assert np.array_equal(m1.bits, m2.bits)

    def test_mask_must_have_tissue(self):
        with pytest.raises(DegenerateMask):
            TissueMask(np.zeros((3, 3), bool))


class TestDownsample:
    def test_aspect(self):
        assert downsample_size(4000, 2000, 512) == (512, 256)

    def test_constant(self):
        out = downsample(rgb(np.full((100, 60, 3), 0.3)), 32)
        assert out.shape == (32, 19)
        assert np.allclose(out.data, 0.3, atol=1e-12)

    def test_checkerboard_block_mean(self):
        d = (np.indices((4, 4)).sum(0) % 2).astype(float)[..., None]
        assert np.array_equal(resize_area(RasterImage(d), 2, 2).data, np.full((2, 2, 1), 0.5))

    def test_small_image_untouched(self):
        img = texture(0, 16)
        assert downsample(img, 16) is img

    def test_mean_preserved(self):
        img = texture(4, 128)
        assert downsample(img, 32).data.mean() == pytest.approx(img.data.mean(), abs=1e-6)

    def test_rejects_tiny_max_dim(self):
        with pytest.raises(ValueError):
            downsample(texture(0), 8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(16, 400), st.integers(16, 400), st.integers(16, 128))
    def test_size_bounds(self, w, h, m):
        ow, oh = downsample_size(w, h, m)
        if max(w, h) <= m:
            assert (ow, oh) == (w, h)
        else:
            assert max(ow, oh) <= m
            # aspect preserved within one pixel
            assert abs(ow - w * m / max(w, h)) <= 1 and abs(oh - h * m / max(w, h)) <= 1


class TestWarp:
    def test_zero_field_identity(self, backend):
        img = texture(5, channels=3)
        assert warp(img, DisplacementField.zeros(64, 64)) == img

    def test_shift_recovers_reference(self, backend):
        ref = texture(6, 48)
        shifted = np.ones_like(ref.data)
        shifted[:, 2:] = ref.data[:, :-2]  # shifted(x) = ref(x - 2)
        out = warp(RasterImage(shifted), DisplacementField.constant(48, 48, 2.0, 0.0))
        assert np.array_equal(out.data[:, :-2], ref.data[:, :-2])

    def test_half_pixel_on_ramp(self, backend):
        ramp = np.tile(np.linspace(0, 1, 21), (5, 1))[..., None]
        out = warp(RasterImage(ramp), DisplacementField.constant(21, 5, 0.5, 0.0))
        assert np.allclose(out.data[:, :-1, 0], ramp[:, :-1, 0] + 0.025, atol=1e-12)
        assert np.all(out.data[:, -1] == 1.0)  # clamped

    def test_dimension_mismatch(self):
        from slidepair.errors import DimensionMismatch
        with pytest.raises(DimensionMismatch):
            warp(texture(0, 16), DisplacementField.zeros(8, 16))


class TestApplyAffine:
    def test_identity(self, backend):
        img = texture(7, channels=3)
        assert apply_affine(img, AffineTransform2D.identity(), 64, 64) == img

    def test_translation_fills_white(self, backend):
        img = texture(8, 32)
        out = apply_affine(img, AffineTransform2D.translation(10, 0), 32, 32).data
        assert np.all(out[:, :10] == 1.0)
        assert np.array_equal(out[:, 10:], img.data[:, :-10])

    def test_rotate_90_matches_index_permutation(self, backend):
        img = texture(9, 40, channels=3)
        c = (39 / 2, 39 / 2)
        out = apply_affine(img, AffineTransform2D.rotation(90, center=c), 40, 40).data
        # rotation(90) sends (x, y) to (c - (y - c), c + (x - c)) in y-down pixels
        assert np.allclose(out, np.rot90(img.data, k=-1, axes=(0, 1)), atol=1e-6)

    def test_singular(self):
        with pytest.raises(SingularTransform):
            apply_affine(texture(0, 8), AffineTransform2D(1, 2, 0, 2, 4, 0), 8, 8)

    def test_composition_close_on_interior(self, backend):
        img = texture(10, 96, sigma=4.0)
        t1 = AffineTransform2D.rotation(7, center=(48, 48))
        t2 = compose(AffineTransform2D.translation(2.5, -1.5), AffineTransform2D.rotation(-4, center=(40, 50)))
        twice = apply_affine(apply_affine(img, t1, 96, 96), t2, 96, 96).data
        once = apply_affine(img, compose(t2, t1), 96, 96).data
        assert np.abs(twice - once)[20:-20, 20:-20].mean() < 2e-2

    def test_offset_grid_matches_full_frame(self, backend):
        from slidepair.imaging import sample_affine
        img = texture(11, 64, channels=3)
        t = AffineTransform2D(0.95, 0.1, 3, -0.08, 1.02, -2)
        full = sample_affine(img.data, t, 64, 64)
        tile = sample_affine(img.data, t, 20, 16, x0=30, y0=40)
        assert np.array_equal(tile, full[40:56, 30:50])
