"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints one line per kernel with the best wall time of each backend and the
speedup.  Both backends are checked to return the same answer first.
"""

import argparse
import time

import numpy as np

from shapemapper import kernels, mesher, metrics
from shapemapper.shapes import benchmark_shapes


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    shape = dict(benchmark_shapes())["car_sedan"]
    grid = mesher.eval_grid(shape.sdf, 64)
    rng = np.random.default_rng(0)
    A, B = rng.uniform(size=(2, 256, 3))
    C, D = rng.uniform(size=(2, 2048, 3))
    yield "marching_cubes 64^3", lambda b: mesher.marching_cubes(grid, backend=b).triangles.tobytes()
    yield "emd_exact n=256", lambda b: metrics.emd_exact(A, B, backend=b)
    yield "emd_approx n=256", lambda b: metrics.emd_approx(A, B, backend=b)
    yield "chamfer n=2048", lambda b: metrics.chamfer(C, D, backend=b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if "cython" not in kernels.BACKENDS:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'kernel':<22}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for name, fn in cases():
        if fn("python") != fn("cython"):
            raise SystemExit(f"{name}: backends disagree")
        tp = best_of(lambda: fn("python"), args.repeat)
        tc = best_of(lambda: fn("cython"), args.repeat)
        print(f"{name:<22}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
