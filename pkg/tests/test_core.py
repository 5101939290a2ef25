from fractions import Fraction

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import example, given, settings
from hypothesis import strategies as st
from PIL import Image

from pcsr import core


def brute_distances(h, w, q):
    """Exact squared distance from ``q`` to every cell center, row-major."""
    qy, qx = Fraction(q[0]), Fraction(q[1])
    return {(r, c): (qy - Fraction(2 * r + 1, h) + 1) ** 2 + (qx - Fraction(2 * c + 1, w) + 1) ** 2
            for r in range(h) for c in range(w)}


def brute_nearest(h, w, q):
    """First (row-major) exact minimum."""
    d = brute_distances(h, w, q)
    return min(d, key=lambda cell: (d[cell], cell))


def test_centers_hand_values():
    np.testing.assert_allclose(core.centers(4), [-0.75, -0.25, 0.25, 0.75])


def test_single_cell_grid():
    grid = core.make_query_grid((1, 1), (1, 1))
    assert len(grid) == 1
    np.testing.assert_array_equal(grid.coords_norm, [[0.0, 0.0]])


def test_grid_contained_and_row_major():
    grid = core.make_query_grid((2, 2), (1, 1))
    assert len(grid) == 4
    assert np.all(np.abs(grid.lr_coords_norm) <= 1)
    np.testing.assert_array_equal(grid.coords_int, [[0, 0], [0, 1], [1, 0], [1, 1]])


@pytest.mark.parametrize("size", [(0, 3), (3, -1)])
def test_grid_rejects_bad_sizes(size):
    with pytest.raises(ValueError):
        core.make_query_grid(size, (1, 1))


def test_grid_rejects_hr_smaller_than_lr():
    with pytest.raises(ValueError):
        core.make_query_grid((2, 2), (4, 4))


@given(st.integers(1, 64))
def test_centers_properties(n):
    c = core.centers(n)
    assert np.all(np.diff(c) > 0)
    np.testing.assert_allclose(c, -c[::-1], atol=1e-15)
    assert np.all((c > -1) & (c < 1))


def test_nearest_quadrant():
    feats = np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3)
    grid = core.make_query_grid((4, 4), (2, 2))
    look = core.nearest_feature(feats, grid.lr_coords_norm[0])
    assert look.cell == (0, 0)
    np.testing.assert_array_equal(look.feature, feats[0, 0])


def test_nearest_at_center_has_zero_offset():
    feats = np.random.default_rng(0).random((3, 5, 2))
    q = (core.centers(3)[1], core.centers(5)[3])
    look = core.nearest_feature(feats, q)
    assert look.cell == (1, 3)
    np.testing.assert_array_equal(look.rel_coord, [0.0, 0.0])


def test_nearest_tie_breaks_to_smaller_index():
    feats = np.zeros((1, 2, 1))
    look = core.nearest_feature(feats, (0.0, 0.0))
    assert look.cell == (0, 0)
    assert brute_nearest(1, 2, (0.0, 0.0)) == (0, 0)


def test_nearest_rejects_empty_and_outside():
    with pytest.raises(ValueError):
        core.nearest_feature(np.zeros((0, 2, 3)), (0, 0))
    with pytest.raises(ValueError):
        core.nearest_feature(np.zeros((2, 2, 3)), (1.5, 0))


@settings(max_examples=200)
@example(5, 1, 0.2, 0.0)  # within one ulp of a cell boundary
@given(st.integers(1, 9), st.integers(1, 9),
       st.floats(-1, 1, allow_nan=False), st.floats(-1, 1, allow_nan=False))
def test_nearest_matches_brute_force(h, w, qy, qx):
    feats = np.random.default_rng(h * 10 + w).random((h, w, 2))
    look = core.nearest_feature(feats, (qy, qx))
    best = brute_nearest(h, w, (qy, qx))
    if look.cell != best:
        # only allowed within float rounding of a boundary, resolved to the smaller index
        d = brute_distances(h, w, (qy, qx))
        assert abs(float(d[look.cell] - d[best])) < 1e-12
        assert look.cell < best
    assert np.all(np.abs(look.rel_coord) <= 1 + 1e-9)
    again = core.nearest_feature(feats, (qy, qx))
    assert again.cell == look.cell


@pytest.mark.parametrize("scale", [1, 2, 3, 4])
def test_integer_scale_maps_to_floor_cell(scale):
    h, w = 3, 5
    grid = core.make_query_grid((h * scale, w * scale), (h, w))
    rows, cols, rel = core.nearest_cells(grid.lr_coords_norm, (h, w))
    np.testing.assert_array_equal(rows, grid.coords_int[:, 0] // scale)
    np.testing.assert_array_equal(cols, grid.coords_int[:, 1] // scale)
    assert np.all(np.abs(rel) < 1)


def test_bilinear_hand_case():
    lr = np.zeros((1, 2, 3))
    lr[0, 1] = 1.0
    out = core.bilinear_upsample(lr, (1, 4))
    np.testing.assert_allclose(out[0, :, 0], [0.0, 0.25, 0.75, 1.0], atol=0)


def test_bilinear_constant_and_identity():
    const = np.full((5, 7, 3), 0.5)
    np.testing.assert_array_equal(core.bilinear_upsample(const, (15, 21)), 0.5)
    img = np.random.default_rng(1).random((6, 4, 3))
    np.testing.assert_array_equal(core.bilinear_upsample(img, (6, 4)), img)


@pytest.mark.parametrize("shape,out", [((5, 7), (10, 14)), ((4, 4), (12, 12)), ((3, 8), (9, 24))])
def test_bilinear_matches_torch(shape, out):
    img = np.random.default_rng(2).random(shape + (3,))
    ref = F.interpolate(torch.from_numpy(img).permute(2, 0, 1)[None], size=out,
                        mode="bilinear", align_corners=False)[0].permute(1, 2, 0).numpy()
    np.testing.assert_allclose(core.bilinear_upsample(img, out), ref, atol=1e-12)


def test_bilinear_batched_leading_dims():
    imgs = np.random.default_rng(3).random((2, 4, 5, 3))
    out = core.bilinear_upsample(imgs, (8, 10))
    np.testing.assert_array_equal(out[1], core.bilinear_upsample(imgs[1], (8, 10)))


def test_bilinear_channel_permutation_and_affine():
    img = np.random.default_rng(4).random((6, 6, 3)) * 0.5 + 0.2
    out = core.bilinear_upsample(img, (12, 12))
    perm = [2, 0, 1]
    np.testing.assert_array_equal(core.bilinear_upsample(img[..., perm], (12, 12)), out[..., perm])
    a, b = 0.7, 0.1
    np.testing.assert_allclose(core.bilinear_upsample(a * img + b, (12, 12)), a * out + b, atol=1e-6)


def test_bicubic_constant_identity_and_errors():
    const = np.full((8, 8, 3), 0.3)
    np.testing.assert_array_equal(core.bicubic_downsample(const, 2), 0.3)
    img = np.random.default_rng(5).random((6, 6, 3))
    np.testing.assert_array_equal(core.bicubic_downsample(img, 1), img)
    with pytest.raises(ValueError):
        core.bicubic_downsample(np.zeros((7, 8, 3)), 2)


def test_bicubic_ramp_close_to_block_mean():
    ramp = np.tile(np.linspace(0, 1, 8)[None, :, None], (8, 1, 3))
    out = core.bicubic_downsample(ramp, 2)
    block = ramp.reshape(4, 2, 4, 2, 3).mean(axis=(1, 3))
    assert np.abs(out - block).max() <= 0.05


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_bicubic_matches_pillow(scale):
    rng = np.random.default_rng(scale)
    gray = rng.random((24, 36)).astype(np.float32)
    ref = Image.fromarray(gray, mode="F").resize((36 // scale, 24 // scale), Image.BICUBIC)
    ref = np.clip(np.asarray(ref, dtype=np.float64), 0, 1)
    out = core.bicubic_downsample(np.repeat(gray[..., None], 3, axis=2), scale)
    np.testing.assert_allclose(out[..., 0], ref, atol=1e-6)


def test_down_then_up_keeps_constants():
    const = np.full((12, 12, 3), 0.625)
    np.testing.assert_array_equal(core.bilinear_upsample(core.bicubic_downsample(const, 3), (12, 12)), 0.625)
