"""Grid conventions, nearest-feature lookup and reference resampling.

Images are ``H x W x 3`` float arrays in [0, 1]; feature maps are ``h x w x D``.
Normalized coordinates put pixel centers at ``-1 + (2i + 1) / n`` along an axis
of length ``n``, so the whole image spans [-1, 1] regardless of resolution.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QueryGrid:
    """All HR query pixels in row-major order.

    ``lr_coords_norm`` holds the same physical points expressed on the LR grid.
    Both grids span [-1, 1], so the values coincide with ``coords_norm``; they
    are kept as a separate field because lookups are defined against it.
    """

    hr_size: tuple
    lr_size: tuple
    coords_int: np.ndarray
    coords_norm: np.ndarray
    lr_coords_norm: np.ndarray

    def __len__(self):
        return self.coords_int.shape[0]


@dataclass(frozen=True)
class NearestLookup:
    feature: np.ndarray
    cell: tuple
    feature_coord_norm: np.ndarray
    rel_coord: np.ndarray


def _check_size(size, name):
    if len(size) != 2:
        raise ValueError(f"{name} must be (rows, cols), got {size!r}")
    rows, cols = int(size[0]), int(size[1])
    if rows < 1 or cols < 1:
        raise ValueError(f"{name} must be positive, got {size!r}")
    return rows, cols


def centers(n):
    """Normalized pixel-center coordinates for an axis of length ``n``."""
    if n < 1:
        raise ValueError(f"axis length must be positive, got {n}")
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def make_query_grid(hr_size, lr_size):
    H, W = _check_size(hr_size, "hr_size")
    h, w = _check_size(lr_size, "lr_size")
    if H < h or W < w:
        raise ValueError(f"hr_size {hr_size} smaller than lr_size {lr_size}")
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    coords_int = np.stack([rows.ravel(), cols.ravel()], axis=1)
    ys, xs = np.meshgrid(centers(H), centers(W), indexing="ij")
    coords_norm = np.stack([ys.ravel(), xs.ravel()], axis=1)
    return QueryGrid((H, W), (h, w), coords_int, coords_norm, coords_norm.copy())


def nearest_index(q, n):
    """Index of the nearest center on an axis of length ``n``.

    Exact midpoints resolve to the smaller index.
    """
    q = np.asarray(q, dtype=np.float64)
    idx = np.ceil((q + 1.0) * n / 2.0).astype(np.int64) - 1
    return np.clip(idx, 0, n - 1)


def nearest_cells(coords_norm, lr_size):
    """Vectorized nearest lookup: LR (row, col) per query and scaled offsets.

    The relative coordinate is ``(q - v*)`` multiplied by ``h`` on y and ``w``
    on x, which keeps it inside [-1, 1] for in-range queries.
    """
    h, w = _check_size(lr_size, "lr_size")
    coords_norm = np.asarray(coords_norm, dtype=np.float64)
    rows = nearest_index(coords_norm[:, 0], h)
    cols = nearest_index(coords_norm[:, 1], w)
    rel = np.empty_like(coords_norm)
    rel[:, 0] = (coords_norm[:, 0] - centers(h)[rows]) * h
    rel[:, 1] = (coords_norm[:, 1] - centers(w)[cols]) * w
    return rows, cols, rel


def nearest_feature(features, q):
    """Feature at the Euclidean-nearest LR cell center for one query ``q``."""
    features = np.asarray(features)
    if features.ndim != 3 or features.shape[0] == 0 or features.shape[1] == 0:
        raise ValueError(f"feature map must be non-empty h x w x D, got {features.shape}")
    q = np.asarray(q, dtype=np.float64).reshape(1, 2)
    if np.any(np.abs(q) > 1.0):
        raise ValueError(f"query {q.ravel()} outside [-1, 1]^2")
    h, w = features.shape[:2]
    rows, cols, rel = nearest_cells(q, (h, w))
    r, c = int(rows[0]), int(cols[0])
    v = np.array([centers(h)[r], centers(w)[c]])
    return NearestLookup(features[r, c].copy(), (r, c), v, rel[0])


def gather_queries(features, grid, index=None):
    """Build MLP inputs ``[z*, rel_coord]`` for (a subset of) ``grid``."""
    h, w, _ = features.shape
    coords = grid.lr_coords_norm if index is None else grid.lr_coords_norm[index]
    rows, cols, rel = nearest_cells(coords, (h, w))
    z = np.asarray(features, dtype=np.float64)[rows, cols]
    return np.concatenate([z, rel], axis=1)


def _as_image(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty H x W x 3 array, got {img.shape}")
    return img


def _resample_axis(img, axis, index, weight):
    """out[o] = sum_t weight[o, t] * img[index[o, t]] along ``axis``.

    Weights sum to one, so the sum is evaluated as offsets from the first tap;
    this keeps constant signals exactly constant.
    """
    moved = np.moveaxis(img, axis, 0)
    base = moved[index[:, 0]]
    out = base.copy()
    extra = (slice(None),) + (None,) * (moved.ndim - 1)
    for t in range(1, index.shape[1]):
        out += weight[:, t][extra] * (moved[index[:, t]] - base)
    return np.moveaxis(out, 0, axis)


def _bilinear_taps(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    index = np.stack([i0, i1], axis=1)
    weight = np.stack([1.0 - frac, frac], axis=1)
    return index, weight


def bilinear_upsample(lr, hr_size):
    """Bilinear resize with pixel-center (align_corners=False) sampling.

    Accepts any leading batch dimensions in front of ``h x w x 3``.
    """
    lr = np.asarray(lr, dtype=np.float64)
    if lr.ndim < 3 or lr.shape[-1] != 3 or lr.shape[-3] < 1 or lr.shape[-2] < 1:
        raise ValueError(f"expected (..., h, w, 3) input, got {lr.shape}")
    H, W = _check_size(hr_size, "hr_size")
    h, w = lr.shape[-3], lr.shape[-2]
    out = lr
    if H != h:
        out = _resample_axis(out, lr.ndim - 3, *_bilinear_taps(h, H))
    if W != w:
        out = _resample_axis(out, lr.ndim - 2, *_bilinear_taps(w, W))
    return np.clip(out, 0.0, 1.0)


def cubic_kernel(x, a=-0.5):
    x = np.abs(x)
    return np.where(
        x < 1.0,
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0,
        np.where(x < 2.0, (((x - 5.0) * x + 8.0) * x - 4.0) * a, 0.0),
    )


def _bicubic_taps(n_in, n_out):
    # antialiased: kernel support stretched by the reduction factor
    scale = n_in / n_out
    filterscale = max(scale, 1.0)
    support = 2.0 * filterscale
    n_taps = int(np.ceil(support)) * 2 + 1
    index = np.zeros((n_out, n_taps), dtype=np.int64)
    weight = np.zeros((n_out, n_taps), dtype=np.float64)
    for o in range(n_out):
        center = (o + 0.5) * scale
        lo = max(int(center - support + 0.5), 0)
        hi = min(int(center + support + 0.5), n_in)
        taps = np.arange(lo, hi)
        wts = cubic_kernel((taps - center + 0.5) / filterscale)
        wts = wts / wts.sum()
        index[o, : taps.size] = taps
        weight[o, : taps.size] = wts
    return index, weight


def bicubic_downsample(hr, scale):
    """Antialiased cubic (a = -0.5) reduction by an integer factor."""
    hr = _as_image(hr, "hr")
    scale = int(scale)
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    H, W = hr.shape[:2]
    if H % scale or W % scale:
        raise ValueError(f"image size {H}x{W} not divisible by scale {scale}")
    if scale == 1:
        return hr.copy()
    out = _resample_axis(hr, 0, *_bicubic_taps(H, H // scale))
    out = _resample_axis(out, 1, *_bicubic_taps(W, W // scale))
    return np.clip(out, 0.0, 1.0)
