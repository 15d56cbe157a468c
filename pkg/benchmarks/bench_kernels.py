"""Time the compiled and numpy kernel backends on representative inputs.

Run ``python benchmarks/bench_kernels.py [--size N] [--repeat R]``. Each
kernel is called on both backends with identical inputs; the outputs are
compared and the best-of-R wall time is reported.
"""
import argparse
import timeit

import numpy as np

from imitreg.kernels import available_backends


def cases(size, rng):
    img = rng.normal(size=(size, size))
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    xs = xs * 0.97 + 3.3
    ys = ys * 1.02 - 2.1
    kern = np.exp(-0.5 * (np.arange(-8, 9) / 3.0) ** 2)
    kern /= kern.sum()
    h = [rng.normal(size=(size // 4, size // 4)) for _ in range(3)]
    return {
        "bilinear_sample": (img, xs, ys, 0.0),
        "correlate1d_reflect": (img, kern, 1),
        "box_sum": (img, 4),
        "frangi_response": (*h, 0.5, 15.0, True),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is available")
    inputs = cases(args.size, np.random.default_rng(0))
    names = list(backends)
    print(f"image {args.size}x{args.size}, best of {args.repeat}")
    print(f"{'kernel':<22}" + "".join(f"{n + ' ms':>12}" for n in names) + f"{'speedup':>10}{'max diff':>12}")
    for kernel, a in inputs.items():
        times, outs = {}, {}
        for n in names:
            fn = getattr(backends[n], kernel)
            outs[n] = fn(*a)
            times[n] = min(timeit.repeat(lambda: fn(*a), number=1, repeat=args.repeat)) * 1e3
        line = f"{kernel:<22}" + "".join(f"{times[n]:12.2f}" for n in names)
        if len(names) > 1:
            diff = float(np.max(np.abs(outs["cython"] - outs["python"])))
            line += f"{times['python'] / times['cython']:9.1f}x{diff:12.1e}"
        print(line)


if __name__ == "__main__":
    main()
