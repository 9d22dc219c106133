"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from slidepair import _kernels


def cases(rng):
    img = rng.random((1024, 1024, 3))
    ys, xs = np.mgrid[0:1024, 0:1024].astype(np.float64)
    th = np.deg2rad(17.0)
    rx = np.cos(th) * xs - np.sin(th) * ys + 40
    ry = np.sin(th) * xs + np.cos(th) * ys - 60
    coeffs = [np.cos(th), -np.sin(th), 40.0, np.sin(th), np.cos(th), -60.0]
    small = rng.random((512, 512))
    yield "hungarian 60x60", lambda m: m.hungarian_square(rng_cost(60))
    yield "hungarian 200x200", lambda m: m.hungarian_square(rng_cost(200))
    yield "bilinear 1024^2 x3 clamp", lambda m: m.bilinear_sample(img, rx, ry, None)
    yield "bilinear 1024^2 x3 fill", lambda m: m.bilinear_sample(img, rx, ry, 1.0)
    yield "affine 1024^2 x3 fill", lambda m: m.affine_sample(img, coeffs, 1024, 1024, 0.0, 0.0, 1.0)
    yield "affine 512^2 x1 fill", lambda m: m.affine_sample(small[:, :, None], coeffs, 512, 512, 0.0, 0.0, 1.0)


_COSTS = {}


def rng_cost(n):
    if n not in _COSTS:
        _COSTS[n] = np.random.default_rng(n).uniform(0, 1000, (n, n))
    return _COSTS[n]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = sorted(_kernels.BACKENDS)
    if "cython" not in backends:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'case':28s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(np.random.default_rng(0)):
        times = {}
        for b in backends:
            mod = _kernels.BACKENDS[b]
            fn(mod)  # warm up
            times[b] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        row = f"{name:28s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
