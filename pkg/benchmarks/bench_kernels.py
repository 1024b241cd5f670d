"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N time per call for each kernel and backend, and checks
that both backends agree before timing anything.
"""

import argparse
import timeit

import numpy as np

from cxv import _kernels_py

try:
    from cxv import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def cases(rng):
    x = rng.normal(size=(32, 64, 34, 34)).astype(np.float32)
    cols = rng.normal(size=(32, 32, 32, 64, 3, 3)).astype(np.float32)
    img = rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
    c, s = np.cos(0.2), np.sin(0.2)
    inv = np.array([[c, s, 15.5 - 15.5 * c - 15.5 * s], [-s, c, 15.5 + 15.5 * s - 15.5 * c]])
    return {
        "im2col  [32,64,34,34] k3": (lambda m: m.im2col(x, 3, 3, 1)),
        "col2im  [32,32,32,64,3,3]": (lambda m: m.col2im(cols, 34, 34, 1)),
        "warp    [3,32,32] x256": (lambda m: [m.warp_nearest(img, inv) for _ in range(256)]),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = {"python": _kernels_py}
    if compiled is not None:
        backends["cython"] = compiled
    else:
        print("compiled extension not available; timing the fallback only")
    print(f"{'kernel':<28}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if compiled else ""))
    for name, fn in cases(rng).items():
        if compiled is not None:
            a, b = fn(_kernels_py), fn(compiled)
            assert np.allclose(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), atol=1e-4), name
        times = {b: min(timeit.repeat(lambda m=m: fn(m), number=1, repeat=args.repeat)) for b, m in backends.items()}
        row = f"{name:<28}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if compiled is not None:
            row += f"{times['python'] / times['cython']:>11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
