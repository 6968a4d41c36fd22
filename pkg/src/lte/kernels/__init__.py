"""Hot kernels with a compiled core and a numpy fallback.

The compiled extension is used when importable unless ``LTE_BACKEND=python``.
Both backends can be loaded side by side through :func:`get_backend`.
"""
import os

import numpy as np

from lte.kernels import fallback
from lte.kernels.build import KDTree, build_bvh, build_kdtree

try:
    from lte.kernels import _ext
except ImportError:  # extension not built
    _ext = None

_BACKENDS = {"python": fallback}
if _ext is not None:
    _BACKENDS["compiled"] = _ext


def get_backend(name=None):
    if name is None:
        name = os.environ.get("LTE_BACKEND") or ("compiled" if _ext is not None else "python")
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_BACKENDS)}")
    return _BACKENDS[name]


active = get_backend()
BACKEND = "compiled" if active is _ext and _ext is not None else "python"


def scatter_add_rows(src, index, n):
    """out[index[i]] += src[i] for rows of any trailing shape."""
    rest = src.shape[1:]
    flat = np.ascontiguousarray(src.reshape(len(src), -1))
    out = active.scatter_add_rows(flat, np.ascontiguousarray(index, dtype=np.int64), n)
    return np.asarray(out).reshape((n,) + rest)


def fps(pos, m, start, backend=None):
    mod = get_backend(backend) if backend else active
    return mod.fps(pos, m, start)


def kdtree_query(tree: KDTree, queries, k, backend=None):
    mod = get_backend(backend) if backend else active
    return mod.kdtree_query(tree.points, tree.order, tree.lo, tree.hi, tree.left, tree.right,
                            tree.start, tree.count, tree.axis, tree.split, queries, k)


def intersect(packed, origins, dirs, tmax, backend=None):
    mod = get_backend(backend) if backend else active
    return mod.intersect(packed, origins, dirs, tmax)


def trace_paths(packed, origins, dirs, keys, max_depth, ctr_base=0, backend=None):
    mod = get_backend(backend) if backend else active
    return mod.trace_paths(packed, origins, dirs, keys, max_depth, ctr_base)


__all__ = [
    "BACKEND", "KDTree", "build_bvh", "build_kdtree", "fps", "get_backend", "intersect",
    "kdtree_query", "scatter_add_rows", "trace_paths",
]
