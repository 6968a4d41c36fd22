"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--repeat 3] [--quick]

Prints one row per kernel with the best-of-N wall time for each backend, the
speedup, and whether both backends returned identical results.
"""
import argparse
import time

import numpy as np

from lte import kernels
from lte.scene import cornell_box
from lte.tracer.accel import build_bvh
from lte.tracer.sampling import stream_keys


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def cases(quick):
    rng = np.random.default_rng(0)
    n_pts = 2000 if quick else 20000
    pts = rng.random((n_pts, 3))
    tree = kernels.build_kdtree(pts)
    q = rng.random((n_pts // 4, 3))
    acc = build_bvh(cornell_box())
    n_rays = 2000 if quick else 20000
    o = np.tile([2.78, 2.7, 2.8], (n_rays, 1))
    d = rng.normal(size=(n_rays, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    keys = stream_keys(0, np.arange(n_rays))
    src = rng.random((n_pts, 64))
    idx = rng.integers(0, n_pts // 8, n_pts)
    return {
        "fps": lambda b: kernels.fps(pts, n_pts // 2, 0, backend=b),
        "knn k=16": lambda b: kernels.kdtree_query(tree, q, 16, backend=b),
        "intersect": lambda b: kernels.intersect(acc.packed, o, d, np.full(n_rays, np.inf), backend=b),
        "trace_paths d=5": lambda b: kernels.trace_paths(acc.packed, o, d, keys, 5, 2, backend=b),
        "scatter_add_rows": lambda b: kernels.get_backend(b).scatter_add_rows(src, idx, n_pts // 8),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    if kernels._ext is None:
        raise SystemExit("compiled extension not built; pip install -e . first")
    print(f"{'kernel':<18} {'compiled s':>11} {'python s':>11} {'speedup':>8}  match")
    for name, fn in cases(args.quick).items():
        tc, rc = best_of(lambda: fn("compiled"), args.repeat)
        tp, rp = best_of(lambda: fn("python"), args.repeat)
        print(f"{name:<18} {tc:11.4f} {tp:11.4f} {tp / tc:8.1f}  {same(rc, rp)}")


if __name__ == "__main__":
    main()
