"""Time the numba kernels against the numpy fallback on inference-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 128]
"""
import argparse
import time

import numpy as np

from pcsr import kernels


def best_of(fn, repeat):
    fn()  # warm-up (JIT compile / cache load)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(size, rng):
    h = w = size // 2
    x = rng.random((16, h, w))
    wt = rng.normal(size=(16, 16, 3, 3))
    b = rng.normal(size=16)
    q = rng.normal(size=(size * size, 18))
    dims = [18, 64, 64, 3]
    ws = tuple(rng.normal(size=(a, c)) for a, c in zip(dims[:-1], dims[1:]))
    bs = tuple(rng.normal(size=c) for c in dims[1:])
    img = rng.random((size, size, 3))
    labels = rng.integers(2, size=(size, size))
    diff = rng.random(size * size)
    return {
        "conv2d 16->16 k3": lambda impl: impl.conv2d(x, wt, b),
        "mlp 18-64-64-3": lambda impl: impl.mlp_forward(q, ws, bs),
        "refine 3x3": lambda impl: impl.refine(img, labels, 1),
        "kmeans_1d M=2": lambda impl: impl.kmeans_1d(diff, 2, 20),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--size", type=int, default=128, help="HR side length")
    args = parser.parse_args()
    if kernels.numba_impl is None:
        parser.error("numba is not installed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, run in cases(args.size, rng).items():
        t_np = best_of(lambda: run(kernels.numpy_impl), args.repeat)
        t_nb = best_of(lambda: run(kernels.numba_impl), args.repeat)
        print(f"{name:<20s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
