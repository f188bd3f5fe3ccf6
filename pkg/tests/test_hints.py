"""Hint warping, mask processing, and Voronoi inpainting against oracles."""

import numpy as np
import numpy.testing as npt
import pytest

from convexscene.editing import CorrespondenceResult
from convexscene.errors import ValidationError
from convexscene.hints import (bilinear_sample, build_hint_package,
                               generate_hint, process_mask, voronoi_inpaint)

from helpers import brute_force_voronoi


def identity_corr(h, w, conf=1.0):
    R = np.zeros((h, w, 2))
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    R[..., 0] = xs
    R[..., 1] = ys
    return CorrespondenceResult(R, np.full((h, w), conf))


class TestBilinearSample:
    def test_integer_coordinates_exact(self):
        rng = np.random.default_rng(0)
        img = rng.random((3, 6, 7))
        npt.assert_array_equal(bilinear_sample(img, 2, 3), img[:, 2, 3])

    def test_midpoint_of_2x2(self):
        img = np.array([[[10.0, 20.0], [30.0, 40.0]]])  # 1 x 2 x 2
        assert bilinear_sample(img, 0.5, 0.5)[0] == pytest.approx(25.0)

    def test_clip_contract(self):
        rng = np.random.default_rng(1)
        img = rng.random((1, 4, 5))
        w = img.shape[2]
        npt.assert_array_equal(bilinear_sample(img, 1.0, w + 5),
                               bilinear_sample(img, 1.0, w - 1.001))

    def test_two_stage_lerp_formula(self):
        rng = np.random.default_rng(2)
        img = rng.random((2, 5, 5))
        y, x = 1.3, 2.7
        x0, y0 = 2, 1
        wx, wy = x - x0, y - y0
        top = img[:, y0, x0] * (1 - wx) + img[:, y0, x0 + 1] * wx
        bot = img[:, y0 + 1, x0] * (1 - wx) + img[:, y0 + 1, x0 + 1] * wx
        npt.assert_allclose(bilinear_sample(img, y, x), top * (1 - wy) + bot * wy)


class TestGenerateHint:
    def test_identity_reproduces_source(self):
        # bit-exact except the last row/column, where the sample coordinate
        # clips to W - 1.001 and blends with the neighbour (clip contract)
        rng = np.random.default_rng(3)
        img = rng.random((3, 8, 8)).astype(np.float32)
        corr = identity_corr(8, 8)
        out = generate_hint(img, corr, np.zeros((8, 8), dtype=np.int8))
        npt.assert_array_equal(out[:, :7, :7], img[:, :7, :7])
        npt.assert_allclose(out, img, atol=2e-3)

    def test_low_confidence_skipped(self):
        rng = np.random.default_rng(4)
        img = rng.random((3, 4, 4)).astype(np.float32)
        corr = identity_corr(4, 4)
        W = corr.W.copy()
        W[1, 2] = 0.05
        corr = CorrespondenceResult(corr.R, W)
        out = generate_hint(img, corr, np.zeros((4, 4), dtype=np.int8))
        npt.assert_array_equal(out[:, 1, 2], [0, 0, 0])
        npt.assert_array_equal(out[:, 0, 0], img[:, 0, 0])

    def test_hit_mask_skips(self):
        rng = np.random.default_rng(5)
        img = rng.random((3, 4, 4)).astype(np.float32)
        corr = identity_corr(4, 4)
        hit = np.zeros((4, 4), dtype=np.int8)
        hit[0, 0] = 1
        out = generate_hint(img, corr, hit)
        npt.assert_array_equal(out[:, 0, 0], [0, 0, 0])

    def test_2x_upscale_of_linear_ramp(self):
        # source: 16x16 linear ramp; correspondence at 8x8
        h_s = w_s = 16
        ys, xs = np.mgrid[0:h_s, 0:w_s].astype(np.float64)
        ramp = (0.25 + xs / 40.0 + ys / 60.0)[None]  # 1 x 16 x 16
        corr = identity_corr(8, 8)
        out = generate_hint(ramp, corr, np.zeros((8, 8), dtype=np.int8))

        # oracle: evaluate the block-bilinear enlargement sample points directly
        expected = np.zeros_like(ramp)
        for y in range(8):
            for x in range(8):
                for dy in range(2):
                    for dx in range(2):
                        sy = min(y * 2 + dy, h_s - 1.001)
                        sx = min(x * 2 + dx, w_s - 1.001)
                        expected[0, y * 2 + dy, x * 2 + dx] = (
                            0.25 + sx / 40.0 + sy / 60.0)
        npt.assert_allclose(out, expected, atol=1e-6)

    def test_non_integer_scale_rejected(self):
        img = np.zeros((3, 9, 9))
        corr = identity_corr(4, 4)
        with pytest.raises(ValidationError):
            generate_hint(img, corr, np.zeros((4, 4), dtype=np.int8))


class TestProcessMask:
    def test_all_confident(self):
        mask = process_mask(np.ones((5, 5)), 0.01, 9)
        npt.assert_array_equal(mask.values, 1.0)
        assert mask.processed

    def test_chebyshev_ball(self):
        W = np.ones((41, 41))
        W[20, 20] = 0.0
        mask = process_mask(W, 0.01, 9)
        zeros = mask.values == 0
        assert zeros.sum() == 19 * 19
        assert zeros[20 - 9:20 + 10, 20 - 9:20 + 10].all()

    def test_hand_row(self):
        W = np.array([[0.005, 0.5, 0.5, 0.5, 0.5]])
        mask = process_mask(W, 0.01, 1)
        npt.assert_array_equal(mask.values[0], [0, 0, 1, 1, 1])

    def test_monotone_in_dilation(self):
        rng = np.random.default_rng(6)
        W = rng.random((20, 20))
        prev = process_mask(W, 0.3, 0).values
        for d in (1, 2, 4):
            cur = process_mask(W, 0.3, d).values
            assert np.all(cur <= prev)
            prev = cur

    def test_tau_bounds(self):
        with pytest.raises(ValidationError):
            process_mask(np.ones((2, 2)), 0.0, 1)


class TestVoronoiInpaint:
    def test_all_valid_identity(self):
        rng = np.random.default_rng(7)
        img = rng.random((3, 6, 6))
        out = voronoi_inpaint(img, np.ones((6, 6)), 0.01)
        npt.assert_array_equal(out, img)

    def test_single_valid_pixel_floods(self):
        rng = np.random.default_rng(8)
        img = rng.random((3, 5, 5))
        W = np.zeros((5, 5))
        W[2, 3] = 1.0
        out = voronoi_inpaint(img, W, 0.01)
        for c in range(3):
            assert np.all(out[c] == img[c, 2, 3])

    def test_1x10_row_split(self):
        img = np.zeros((3, 1, 10))
        img[:, 0, 0] = (1.0, 0.0, 0.0)
        img[:, 0, 9] = (0.0, 1.0, 0.0)
        W = np.zeros((1, 10))
        W[0, 0] = W[0, 9] = 1.0
        out = voronoi_inpaint(img, W, 0.01)
        for col in range(5):
            npt.assert_array_equal(out[:, 0, col], (1.0, 0.0, 0.0))
        for col in range(5, 10):
            npt.assert_array_equal(out[:, 0, col], (0.0, 1.0, 0.0))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        for _ in range(8):
            h = int(rng.integers(3, 14))
            w = int(rng.integers(3, 14))
            img = rng.random((3, h, w))
            conf = (rng.random((h, w)) > 0.6).astype(float)
            if not conf.any():
                conf[0, 0] = 1.0
            out = voronoi_inpaint(img, conf, 0.5)
            oracle = brute_force_voronoi(img, conf, 0.5)
            npt.assert_array_equal(out, oracle)

    def test_idempotent(self):
        rng = np.random.default_rng(10)
        img = rng.random((3, 9, 9))
        conf = (rng.random((9, 9)) > 0.7).astype(float)
        conf[4, 4] = 1.0
        once = voronoi_inpaint(img, conf, 0.5)
        twice = voronoi_inpaint(once, conf, 0.5)
        npt.assert_array_equal(once, twice)

    def test_no_valid_pixels_rejected(self):
        with pytest.raises(ValidationError):
            voronoi_inpaint(np.zeros((3, 4, 4)), np.zeros((4, 4)), 0.01)


class TestBuildHintPackage:
    def test_identity_package(self):
        rng = np.random.default_rng(11)
        img = rng.random((3, 32, 32)).astype(np.float32)
        corr = identity_corr(32, 32)
        package = build_hint_package(img, corr, np.zeros((32, 32), dtype=np.int8))
        interior = np.s_[:, :31, :31]  # last row/col is the clip contract
        npt.assert_array_equal(package.hint[interior], img[interior])
        npt.assert_array_equal(package.mask.values, 1.0)
        npt.assert_array_equal(package.inpainted, package.hint)

    def test_inpainted_matches_hint_on_mask(self):
        rng = np.random.default_rng(12)
        img = rng.random((3, 40, 40)).astype(np.float32)
        W = np.ones((40, 40))
        W[5:9, 5:9] = 0.0  # a hole
        R = identity_corr(40, 40).R
        corr = CorrespondenceResult(R, W)
        package = build_hint_package(img, corr, np.zeros((40, 40), dtype=np.int8),
                                     dilate_px=2)
        on = package.mask.values == 1.0
        assert on.any() and (~on).any()
        npt.assert_array_equal(package.inpainted[:, on], package.hint[:, on])
        # the hole itself was filled from outside
        hole = np.zeros((40, 40), dtype=bool)
        hole[5:9, 5:9] = True
        assert not np.array_equal(package.inpainted[:, hole], package.hint[:, hole])
