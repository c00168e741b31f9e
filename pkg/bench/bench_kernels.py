"""Benchmark the numba window-gather kernel against the numpy fallback.

Run: python bench/bench_kernels.py [--batch 32] [--iters 5]

Times the raw im2col kernel and a full convolution train step (forward +
backward) through both paths.  The paths are selected the same way the
library selects them: flipping asnpp.kernels.NUMBA_AVAILABLE, which is
what ASNPP_DISABLE_NUMBA=1 does at import time.
"""

import argparse
import time

import numpy as np

from asnpp import kernels
from asnpp.nn.layers import Conv2d

SHAPES = [
    ("entry conv patch batch", (32, 64, 64, 1), 3),
    ("feature conv 64ch", (32, 64, 64, 64), 3),
    ("shallow conv5 16ch", (32, 64, 64, 16), 5),
]


def timeit(fn, iters):
    fn()  # warm up (JIT compile, allocator)
    t0 = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - t0) / iters * 1e3


def bench_im2col(batch, iters):
    print(f"{'im2col':<28}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    rng = np.random.default_rng(0)
    for name, shape, k in SHAPES:
        shape = (batch, *shape[1:])
        x = rng.random(shape, dtype=np.float32)
        t_np = timeit(lambda: kernels.im2col_numpy(x, k), iters)
        t_nb = timeit(lambda: kernels.im2col_numba(x, k), iters)
        assert np.array_equal(kernels.im2col_numpy(x, k), kernels.im2col_numba(x, k))
        print(f"{name:<28}{t_np:>10.1f}{t_nb:>10.1f}{t_np / t_nb:>8.2f}x")


def bench_conv_step(batch, iters):
    print(f"\n{'conv fwd+bwd step':<28}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    rng = np.random.default_rng(1)
    for name, shape, k in SHAPES:
        shape = (batch, *shape[1:])
        cin = shape[-1]
        conv = Conv2d(cin, 64, k, rng)
        x = rng.random(shape, dtype=np.float32)
        dy = rng.random((*shape[:3], 64), dtype=np.float32)

        def step():
            conv.forward(x, training=True)
            conv.backward(dy)

        times = {}
        saved = kernels.NUMBA_AVAILABLE
        try:
            for label, flag in (("numpy", False), ("numba", True)):
                kernels.NUMBA_AVAILABLE = flag
                times[label] = timeit(step, iters)
        finally:
            kernels.NUMBA_AVAILABLE = saved
        print(
            f"{name:<28}{times['numpy']:>10.1f}{times['numba']:>10.1f}"
            f"{times['numpy'] / times['numba']:>8.2f}x"
        )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--iters", type=int, default=5)
    args = ap.parse_args()

    kernels.reuse_large_allocations()
    print(f"numba available: {kernels.NUMBA_AVAILABLE}, batch {args.batch}\n")
    bench_im2col(args.batch, args.iters)
    bench_conv_step(args.batch, args.iters)


if __name__ == "__main__":
    main()
