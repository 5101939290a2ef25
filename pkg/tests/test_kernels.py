"""The numba kernels and the numpy fallback must agree bitwise."""
import numpy as np
import pytest

from pcsr import kernels

pytestmark = pytest.mark.skipif(kernels.numba_impl is None, reason="numba not installed")

BACKENDS = [kernels.numpy_impl, kernels.numba_impl]


def test_get_backend_names():
    assert kernels.get_backend("numpy") is kernels.numpy_impl
    assert kernels.get_backend("numba") is kernels.numba_impl
    with pytest.raises(ValueError):
        kernels.get_backend("cuda")


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv2d_parity_and_reference(k):
    rng = np.random.default_rng(k)
    x = rng.normal(size=(3, 7, 6))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    a = kernels.numpy_impl.conv2d(x, w, b)
    c = kernels.numba_impl.conv2d(x, w, b)
    np.testing.assert_array_equal(a, c)
    # direct definition with explicit zero padding
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ref = np.empty_like(a)
    for o in range(4):
        for y in range(7):
            for xx in range(6):
                ref[o, y, xx] = b[o] + np.sum(w[o] * xp[:, y:y + k, xx:xx + k])
    np.testing.assert_allclose(a, ref, atol=1e-12)


def test_mlp_parity_and_row_independence():
    rng = np.random.default_rng(0)
    dims = [18, 32, 16, 3]
    ws = tuple(rng.normal(size=(a, b)) for a, b in zip(dims[:-1], dims[1:]))
    bs = tuple(rng.normal(size=b) for b in dims[1:])
    x = rng.normal(size=(257, 18))
    outs = [impl.mlp_forward(x, ws, bs) for impl in BACKENDS]
    np.testing.assert_array_equal(outs[0], outs[1])
    ref = x
    for i, (wt, b) in enumerate(zip(ws, bs)):
        ref = ref @ wt + b
        if i < len(ws) - 1:
            ref = np.maximum(ref, 0)
    np.testing.assert_allclose(outs[0], ref, atol=1e-10)
    idx = rng.permutation(257)[:40]
    for impl, full in zip(BACKENDS, outs):
        np.testing.assert_array_equal(impl.mlp_forward(x[idx], ws, bs), full[idx])


@pytest.mark.parametrize("m", [2, 3, 4])
def test_refine_parity(m):
    rng = np.random.default_rng(m)
    img = rng.random((17, 23, 3))
    labels = rng.integers(m, size=(17, 23))
    n_heavy = (m + 1) // 2
    a = kernels.numpy_impl.refine(img, labels, n_heavy)
    b = kernels.numba_impl.refine(img, labels, n_heavy)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("m", [1, 2, 3, 5])
def test_kmeans_parity(m):
    values = np.random.default_rng(m).random(1000)
    a = kernels.numpy_impl.kmeans_1d(values, m, 50)
    b = kernels.numba_impl.kmeans_1d(values, m, 50)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert a[2:] == tuple(b[2:])
