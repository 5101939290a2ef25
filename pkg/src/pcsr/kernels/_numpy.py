"""Pure-numpy kernels.

Every routine here accumulates in the same order as its numba twin so the two
backends agree bitwise on float64 inputs.
"""
import numpy as np


def conv2d(x, weight, bias):
    """Stride-1, zero-padded ("same") cross-correlation.

    x: (C, h, w), weight: (O, C, k, k), bias: (O,). Returns (O, h, w).
    """
    c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    pad = k // 2
    xp = np.zeros((c_in, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    xp[:, pad:pad + h, pad:pad + w] = x
    out = np.empty((c_out, h, w), dtype=np.float64)
    out[:] = bias[:, None, None]
    for c in range(c_in):
        for dy in range(k):
            for dx in range(k):
                out += weight[:, c, dy, dx][:, None, None] * xp[c, dy:dy + h, dx:dx + w][None]
    return out


def mlp_forward(x, weights, biases):
    """Row-wise MLP with ReLU between layers and a linear output layer.

    weights[l] has shape (d_in, d_out). Each output row depends only on its
    input row, with a fixed accumulation order over d_in.
    """
    cur = np.asarray(x, dtype=np.float64)
    last = len(weights) - 1
    for layer, (wt, b) in enumerate(zip(weights, biases)):
        nxt = np.empty((cur.shape[0], wt.shape[1]), dtype=np.float64)
        nxt[:] = b[None, :]
        for k in range(wt.shape[0]):
            nxt += cur[:, k:k + 1] * wt[k][None, :]
        if layer != last:
            np.maximum(nxt, 0.0, out=nxt)
        cur = nxt
    return cur


def refine(img, labels, n_heavy):
    """Replace light pixels that touch a heavy 8-neighbor by their 3x3 mean.

    Reads only the input image (single simultaneous pass). Returns the refined
    image, the boolean mask of replaced pixels and the window size per pixel.
    """
    h, w, _ = img.shape
    light = labels >= n_heavy
    heavy = ~light
    hp = np.zeros((h + 2, w + 2), dtype=bool)
    hp[1:-1, 1:-1] = heavy
    touch = np.zeros((h, w), dtype=bool)
    for dy in range(3):
        for dx in range(3):
            if dy == 1 and dx == 1:
                continue
            touch |= hp[dy:dy + h, dx:dx + w]
    mask = light & touch

    acc = np.zeros(img.shape, dtype=np.float64)
    count = np.zeros((h, w), dtype=np.int64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ys, ye = max(0, -dy), min(h, h - dy)
            xs, xe = max(0, -dx), min(w, w - dx)
            acc[ys:ye, xs:xe] += img[ys + dy:ye + dy, xs + dx:xe + dx]
            count[ys:ye, xs:xe] += 1
    out = img.copy()
    out[mask] = acc[mask] / count[mask][:, None]
    return out, mask, count


def kmeans_1d(values, n_clusters, max_iters):
    """Lloyd iterations on scalars from the uniform init (2m+1)/(2M)."""
    values = np.asarray(values, dtype=np.float64)
    centroids = (2.0 * np.arange(n_clusters) + 1.0) / (2.0 * n_clusters)
    labels = np.full(values.shape[0], -1, dtype=np.int64)
    iterations = 0
    converged = False
    for it in range(max_iters):
        iterations = it + 1
        # argmin keeps the first minimum: ties go to the smaller index
        new_labels = np.abs(values[:, None] - centroids[None, :]).argmin(axis=1).astype(np.int64)
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        sums = np.bincount(labels, weights=values, minlength=n_clusters)
        counts = np.bincount(labels, minlength=n_clusters)
        nonempty = counts > 0
        centroids = centroids.copy()
        centroids[nonempty] = sums[nonempty] / counts[nonempty]
    return centroids, labels, iterations, converged
