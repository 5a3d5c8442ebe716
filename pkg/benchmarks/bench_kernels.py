"""Benchmark the two kernel backends on representative shapes.

Run: python benchmarks/bench_kernels.py

The numbers justify the default "auto" selection in atnet.backend:
convolutions on the BLAS/numpy path, warp and PSF correlation on the
compiled path.  Pass --reps to change averaging.
"""

import argparse
import time

import numpy as np

from atnet.backend import HAVE_COMPILED
from atnet.backend import numpy_kernels as npk

if HAVE_COMPILED:
    from atnet.backend import _ckernels as ck


def timeit(fn, *args, reps=5):
    fn(*args)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps


def bench_conv(reps):
    print("conv2d 3x3 forward (NCHW)")
    print(f"  {'shape':<24}{'numpy/BLAS':>14}{'compiled':>14}")
    rng = np.random.default_rng(0)
    for n, c, o, h in [(4, 64, 64, 64), (4, 64, 64, 16), (1, 3, 64, 64), (10, 16, 16, 64)]:
        x = rng.random((n, c, h, h))
        w = rng.random((o, c, 3, 3)) - 0.5
        b = rng.random(o)
        t_np = timeit(npk.conv2d_forward, x, w, b, reps=reps)
        gflops = 2 * n * c * o * h * h * 9 / 1e9
        line = f"  N{n} C{c} O{o} {h}x{h}".ljust(26)
        line += f"{t_np * 1e3:9.1f} ms ({gflops / t_np:5.1f} GF/s)"
        if HAVE_COMPILED:
            xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
            out = np.empty((n, o, h, h))
            t_c = timeit(ck.conv2d_forward_padded, xp, w, b, out, reps=reps)
            line += f"{t_c * 1e3:9.1f} ms ({gflops / t_c:5.1f} GF/s)"
        print(line)


def bench_conv_backward(reps):
    print("conv2d 3x3 backward (NCHW)")
    rng = np.random.default_rng(1)
    for n, c, o, h in [(4, 64, 64, 64), (4, 64, 64, 16)]:
        x = rng.random((n, c, h, h))
        w = rng.random((o, c, 3, 3)) - 0.5
        gy = rng.random((n, o, h, h)) - 0.5
        t_np = timeit(npk.conv2d_backward, x, w, gy, reps=reps)
        line = f"  N{n} C{c} O{o} {h}x{h}".ljust(26) + f"{t_np * 1e3:9.1f} ms"
        if HAVE_COMPILED:
            xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))

            def compiled_bwd():
                gw = np.empty_like(w)
                ck.conv2d_grad_weights(xp, gy, gw)
                gxp = np.zeros_like(xp)
                ck.conv2d_grad_input_padded(w, gy, gxp)

            t_c = timeit(compiled_bwd, reps=reps)
            line += f"{t_c * 1e3:13.1f} ms"
        print(line)


def bench_warp(reps):
    print("bilinear warp (HWC)")
    rng = np.random.default_rng(2)
    for h in (64, 256, 512):
        img = rng.random((h, h, 3))
        dx = rng.random((h, h)) * 2 - 1
        dy = rng.random((h, h)) * 2 - 1
        t_np = timeit(npk.warp_bilinear, img, dx, dy, reps=reps * 4)
        line = f"  {h}x{h}".ljust(26) + f"{t_np * 1e3:9.2f} ms"
        if HAVE_COMPILED:
            out = np.empty_like(img)
            t_c = timeit(ck.warp_bilinear, img, dx, dy, out, reps=reps * 4)
            line += f"{t_c * 1e3:13.2f} ms"
        print(line)


def bench_correlate(reps):
    print("PSF correlation (HWC, replicate padding)")
    rng = np.random.default_rng(3)
    for h, k in [(64, 13), (256, 19)]:
        img = rng.random((h, h, 3))
        kern = rng.random((k, k))
        kern /= kern.sum()
        t_np = timeit(npk.correlate2d, img, kern, reps=reps)
        line = f"  {h}x{h} k={k}".ljust(26) + f"{t_np * 1e3:9.2f} ms"
        if HAVE_COMPILED:
            xp = np.pad(img, ((k // 2,) * 2, (k // 2,) * 2, (0, 0)), mode="edge")
            out = np.zeros_like(img)
            t_c = timeit(ck.correlate2d_valid, xp, kern, out, reps=reps)
            line += f"{t_c * 1e3:13.2f} ms"
        print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()
    if not HAVE_COMPILED:
        print("compiled kernels not built; benchmarking the numpy path only\n")
    bench_conv(args.reps)
    print()
    bench_conv_backward(args.reps)
    print()
    bench_warp(args.reps)
    print()
    bench_correlate(args.reps)


if __name__ == "__main__":
    main()
