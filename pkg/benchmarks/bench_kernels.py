"""Time the convection kernel: compiled core against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 5]
"""

import argparse
import time

import numpy as np

from fracpm import _kernels
from fracpm.fem import make_coefficients
from fracpm.mesh import build_rect_mesh


def best_time(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    backends = ["python"] + (["cython"] if _kernels._compiled is not None else [])
    print(f"{'cells':>8} {'elements':>9} " + " ".join(f"{b:>10}" for b in backends) + "   speedup")
    for n in args.sizes:
        m = build_rect_mesh(-2, 2, -2, 2, n, n)
        AK, _ = make_coefficients(("diag", 10.0, 0.1)).sample(m)
        rng = np.random.default_rng(0)
        rho = rng.uniform(0, 3, m.n_vertices)
        c = rng.standard_normal(m.n_vertices)
        t = {}
        for b in backends:
            t[b] = best_time(lambda: _kernels.convection_rhs(
                m.triangles, m.B, m.grad_basis, m.area, AK, rho, c, 1e-3, 4.0,
                num_threads=args.threads, backend=b), args.repeat)
        speed = f"{t['python'] / t['cython']:8.1f}x" if "cython" in t else "      n/a"
        print(f"{n:>5}^2 {m.n_elements:>9} " + " ".join(f"{t[b] * 1e3:>8.2f}ms" for b in backends)
              + f"  {speed}")


if __name__ == "__main__":
    main()
