import numpy as np
import pytest

from cdcsr.components import (
    ComponentMasks,
    HarrisConfig,
    classify_components,
    component_masks,
    harris_response,
    refine_masks,
)

_SOBEL_D = [-1.0, 0.0, 1.0]
_SOBEL_S = [1.0, 2.0, 1.0]


def oracle_response(gray: np.ndarray, cfg: HarrisConfig) -> np.ndarray:
    """Brute-force per-pixel structure tensor; replicate padding everywhere."""
    h, w = gray.shape

    def at(i, j):
        return gray[min(max(i, 0), h - 1), min(max(j, 0), w - 1)]

    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            vx = vy = 0.0
            for a in range(-1, 2):
                for b in range(-1, 2):
                    v = at(i + a, j + b)
                    vx += _SOBEL_S[a + 1] * _SOBEL_D[b + 1] * v
                    vy += _SOBEL_D[a + 1] * _SOBEL_S[b + 1] * v
            gx[i, j] = vx
            gy[i, j] = vy

    r = int(np.ceil(3.0 * cfg.sigma))
    t = np.arange(-r, r + 1)
    k1 = np.exp(-(t * t) / (2.0 * cfg.sigma**2))
    k1 /= k1.sum()
    win = np.outer(k1, k1)
    xx, yy, xy = gx * gx, gy * gy, gx * gy
    resp = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            sxx = syy = sxy = 0.0
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    ii = min(max(i + a, 0), h - 1)
                    jj = min(max(j + b, 0), w - 1)
                    wgt = win[a + r, b + r]
                    sxx += wgt * xx[ii, jj]
                    syy += wgt * yy[ii, jj]
                    sxy += wgt * xy[ii, jj]
            resp[i, j] = sxx * syy - sxy * sxy - cfg.k * (sxx + syy) ** 2
    return resp


def checkerboard(n: int, sq: int) -> np.ndarray:
    idx = np.arange(n)
    return ((idx[:, None] // sq + idx[None, :] // sq) % 2).astype(float)


class TestHarrisConfig:
    def test_defaults_valid(self):
        HarrisConfig()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"sigma": 0.0},
            {"k": 0.3},
            {"k": 0.0},
            {"corner_thresh": 1.5},
            {"edge_thresh": 0.0},
            {"corner_dilate_radius": -1},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            HarrisConfig(**kwargs)


class TestHarrisResponse:
    def test_constant_zero(self):
        resp = harris_response(np.full((9, 9), 0.7))
        np.testing.assert_allclose(resp, 0.0, atol=1e-12)

    def test_rejects_multichannel(self):
        with pytest.raises(ValueError):
            harris_response(np.zeros((5, 5, 3)))

    def test_oracle_equivalence_random(self):
        cfg = HarrisConfig()
        rng = np.random.default_rng(10)
        for shape in [(7, 7), (9, 12), (16, 16)]:
            img = rng.random(shape)
            got = harris_response(img, cfg)
            want = oracle_response(img, cfg)
            np.testing.assert_allclose(got, want, atol=1e-6)

    def test_oracle_equivalence_structured(self):
        cfg = HarrisConfig(sigma=1.5, k=0.06)
        img = checkerboard(16, 4)
        np.testing.assert_allclose(harris_response(img, cfg), oracle_response(img, cfg), atol=1e-6)

    def test_bright_pixel_peak_location(self):
        img = np.zeros((11, 11))
        img[5, 5] = 1.0
        resp = harris_response(img)
        peak = np.unravel_index(np.argmax(np.abs(resp)), resp.shape)
        assert abs(peak[0] - 5) <= 1 and abs(peak[1] - 5) <= 1

    def test_vertical_step_negative_ridge(self):
        img = np.zeros((12, 12))
        img[:, 6:] = 1.0
        resp = harris_response(img)
        interior = resp[3:9, 5:7]
        assert np.all(interior <= 0)
        # the ridge dominates: far-field response is negligible next to it
        assert interior.min() < 100 * resp[3:9, 0].min() - 1.0


class TestClassifyComponents:
    def test_all_zero_response(self):
        masks = classify_components(np.zeros((6, 6)))
        assert masks.flat.all()
        assert not masks.edge.any() and not masks.corner.any()
        masks.check_partition()

    def test_single_positive_spike(self):
        resp = np.zeros((5, 7))
        resp[2, 3] = 5.0
        masks = classify_components(resp)
        assert masks.corner.sum() == 1 and masks.corner[2, 3] == 1
        assert not masks.edge.any()
        masks.check_partition()

    def test_rejects_nonfinite(self):
        resp = np.zeros((4, 4))
        resp[0, 0] = np.nan
        with pytest.raises(ValueError):
            classify_components(resp)

    def test_checkerboard_junction_corners(self):
        # 8x8 board of 8px squares; junction spacing exceeds the smoothing
        # window so corners localize. Derived with the brute-force oracle:
        # every corner pixel sits within 2.5px (Chebyshev) of an interior
        # junction, all 49 junctions are hit, square centers stay flat and
        # the middles of square boundaries classify as edge.
        n, sq = 64, 8
        board = checkerboard(n, sq)
        masks = classify_components(harris_response(board))
        masks.check_partition()
        junctions = [(y, x) for y in range(sq, n, sq) for x in range(sq, n, sq)]
        corners = np.argwhere(masks.corner)
        assert len(corners) > 0
        for y, x in corners:
            d = min(max(abs(y - (jy - 0.5)), abs(x - (jx - 0.5))) for jy, jx in junctions)
            assert d <= 2.5
        for jy, jx in junctions:
            assert masks.corner[jy - 2 : jy + 2, jx - 2 : jx + 2].any()
        for y in range(sq // 2, n, sq):
            for x in range(sq // 2, n, sq):
                assert masks.flat[y, x]
        for x in range(sq // 2, n, sq):
            assert masks.edge[sq - 1, x] and not masks.corner[sq - 1, x]


class TestRefineMasks:
    def test_radius_zero_identity(self):
        rng = np.random.default_rng(11)
        resp = rng.normal(size=(8, 8))
        masks = classify_components(resp)
        out = refine_masks(masks, HarrisConfig(corner_dilate_radius=0))
        np.testing.assert_array_equal(out.flat, masks.flat)
        np.testing.assert_array_equal(out.edge, masks.edge)
        np.testing.assert_array_equal(out.corner, masks.corner)

    def test_single_corner_dilates_to_block(self):
        corner = np.zeros((7, 7), np.uint8)
        corner[3, 3] = 1
        masks = ComponentMasks(1 - corner, np.zeros_like(corner), corner)
        out = refine_masks(masks, HarrisConfig(corner_dilate_radius=1))
        expected = np.zeros((7, 7), np.uint8)
        expected[2:5, 2:5] = 1
        np.testing.assert_array_equal(out.corner, expected)
        out.check_partition()

    def test_corner_overrides_adjacent_edge(self):
        corner = np.zeros((5, 5), np.uint8)
        corner[2, 2] = 1
        edge = np.zeros((5, 5), np.uint8)
        edge[2, 3] = 1
        edge[2, 1] = 1
        flat = 1 - corner - edge
        out = refine_masks(ComponentMasks(flat, edge, corner), HarrisConfig(corner_dilate_radius=1))
        assert out.corner[2, 3] == 1 and out.corner[2, 1] == 1
        assert not out.edge.any()
        out.check_partition()


class TestPipelineProperties:
    def test_partition_random_images(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            img = rng.random((14, 14, 3))
            masks = component_masks(img)
            masks.check_partition()

    def test_rotation_commutes(self):
        rng = np.random.default_rng(13)
        img = rng.random((12, 12))
        masks = component_masks(img)
        masks_rot = component_masks(np.rot90(img))
        np.testing.assert_array_equal(masks_rot.flat, np.rot90(masks.flat))
        np.testing.assert_array_equal(masks_rot.edge, np.rot90(masks.edge))
        np.testing.assert_array_equal(masks_rot.corner, np.rot90(masks.corner))

    def test_brightness_invariance(self):
        # dyadic values keep the gradient arithmetic exact under the shift
        rng = np.random.default_rng(14)
        img = rng.integers(0, 128, (10, 10)) / 256.0
        a = component_masks(img)
        b = component_masks(img + 32 / 256.0)
        np.testing.assert_array_equal(a.flat, b.flat)
        np.testing.assert_array_equal(a.edge, b.edge)
        np.testing.assert_array_equal(a.corner, b.corner)
