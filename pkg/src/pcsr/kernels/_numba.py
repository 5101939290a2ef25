"""numba-compiled kernels; same signatures and accumulation order as ``_numpy``."""
import numpy as np
from numba import njit


@njit(cache=True)
def _conv2d(x, weight, bias):
    c_in, h, w = x.shape
    c_out = weight.shape[0]
    k = weight.shape[2]
    pad = k // 2
    out = np.empty((c_out, h, w))
    for o in range(c_out):
        for y in range(h):
            for xx in range(w):
                out[o, y, xx] = bias[o]
    for c in range(c_in):
        for dy in range(k):
            for dx in range(k):
                for o in range(c_out):
                    wv = weight[o, c, dy, dx]
                    for y in range(h):
                        sy = y + dy - pad
                        for xx in range(w):
                            sx = xx + dx - pad
                            if 0 <= sy < h and 0 <= sx < w:
                                out[o, y, xx] += wv * x[c, sy, sx]
                            else:
                                out[o, y, xx] += wv * 0.0
    return out


def conv2d(x, weight, bias):
    return _conv2d(np.ascontiguousarray(x, dtype=np.float64),
                   np.ascontiguousarray(weight, dtype=np.float64),
                   np.ascontiguousarray(bias, dtype=np.float64))


@njit(cache=True)
def _mlp_forward(x, weights, biases, width):
    n = x.shape[0]
    n_layers = len(weights)
    out_dim = weights[n_layers - 1].shape[1]
    out = np.empty((n, out_dim))
    cur = np.empty(width)
    nxt = np.empty(width)
    for i in range(n):
        d = x.shape[1]
        for k in range(d):
            cur[k] = x[i, k]
        for layer in range(n_layers):
            wt = weights[layer]
            b = biases[layer]
            d_out = wt.shape[1]
            for o in range(d_out):
                acc = b[o]
                for k in range(d):
                    acc += cur[k] * wt[k, o]
                if layer != n_layers - 1 and not acc > 0.0:
                    acc = 0.0
                nxt[o] = acc
            for o in range(d_out):
                cur[o] = nxt[o]
            d = d_out
        for o in range(out_dim):
            out[i, o] = cur[o]
    return out


def mlp_forward(x, weights, biases):
    weights = tuple(np.ascontiguousarray(wt, dtype=np.float64) for wt in weights)
    biases = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in biases)
    x = np.ascontiguousarray(x, dtype=np.float64)
    width = max([x.shape[1]] + [wt.shape[1] for wt in weights])
    return _mlp_forward(x, weights, biases, width)


@njit(cache=True)
def _refine(img, labels, n_heavy):
    h, w, ch = img.shape
    out = img.copy()
    mask = np.zeros((h, w), dtype=np.bool_)
    count = np.zeros((h, w), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            n = 0
            touch = False
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    sy = y + dy
                    sx = x + dx
                    if 0 <= sy < h and 0 <= sx < w:
                        n += 1
                        if (dy != 0 or dx != 0) and labels[sy, sx] < n_heavy:
                            touch = True
            count[y, x] = n
            if labels[y, x] < n_heavy or not touch:
                continue
            mask[y, x] = True
            for c in range(ch):
                acc = 0.0
                for dy in range(-1, 2):
                    for dx in range(-1, 2):
                        sy = y + dy
                        sx = x + dx
                        if 0 <= sy < h and 0 <= sx < w:
                            acc += img[sy, sx, c]
                out[y, x, c] = acc / n
    return out, mask, count


def refine(img, labels, n_heavy):
    return _refine(np.ascontiguousarray(img, dtype=np.float64),
                   np.ascontiguousarray(labels, dtype=np.int64), n_heavy)


@njit(cache=True)
def _kmeans_1d(values, n_clusters, max_iters):
    n = values.shape[0]
    centroids = np.empty(n_clusters)
    for m in range(n_clusters):
        centroids[m] = (2.0 * m + 1.0) / (2.0 * n_clusters)
    labels = np.full(n, -1, dtype=np.int64)
    new_labels = np.empty(n, dtype=np.int64)
    sums = np.zeros(n_clusters)
    counts = np.zeros(n_clusters, dtype=np.int64)
    iterations = 0
    converged = False
    for it in range(max_iters):
        iterations = it + 1
        changed = False
        for i in range(n):
            best = 0
            best_d = abs(values[i] - centroids[0])
            for m in range(1, n_clusters):
                d = abs(values[i] - centroids[m])
                if d < best_d:
                    best_d = d
                    best = m
            new_labels[i] = best
            if best != labels[i]:
                changed = True
        if not changed:
            converged = True
            break
        for i in range(n):
            labels[i] = new_labels[i]
        sums[:] = 0.0
        counts[:] = 0
        for i in range(n):
            sums[labels[i]] += values[i]
            counts[labels[i]] += 1
        for m in range(n_clusters):
            if counts[m] > 0:
                centroids[m] = sums[m] / counts[m]
    return centroids, labels, iterations, converged


def kmeans_1d(values, n_clusters, max_iters):
    return _kmeans_1d(np.ascontiguousarray(values, dtype=np.float64), n_clusters, max_iters)
