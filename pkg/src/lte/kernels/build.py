"""Acceleration-structure construction shared by both backends (runs once per input)."""
from dataclasses import dataclass

import numpy as np

BOX_PAD = 1e-6


@dataclass(frozen=True)
class KDTree:
    points: np.ndarray
    order: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    axis: np.ndarray
    split: np.ndarray

    def __len__(self):
        return len(self.points)


def build_kdtree(points, leaf_size=16):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError(f"kd-tree needs a non-empty (n, 3) array, got {pts.shape}")
    order = np.arange(len(pts), dtype=np.int64)
    nodes = []  # lo, hi, left, right, start, count, axis, split

    def rec(s, e):
        idx = len(nodes)
        sub = pts[order[s:e]]
        lo, hi = sub.min(0), sub.max(0)
        nodes.append([lo, hi, -1, -1, s, e - s, 0, 0.0])
        if e - s <= leaf_size:
            return idx
        ax = int(np.argmax(hi - lo))
        mid = (e - s) // 2
        part = np.argpartition(sub[:, ax], mid, kind="introselect")
        order[s:e] = order[s:e][part]
        split = pts[order[s + mid], ax]
        nodes[idx][6] = ax
        nodes[idx][7] = split
        nodes[idx][2] = rec(s, s + mid)
        nodes[idx][3] = rec(s + mid, e)
        return idx

    rec(0, len(pts))
    col = lambda i, dt: np.ascontiguousarray([n[i] for n in nodes], dtype=dt)  # noqa: E731
    return KDTree(
        pts, order, col(0, np.float64), col(1, np.float64), col(2, np.int64),
        col(3, np.int64), col(4, np.int64), col(5, np.int64), col(6, np.int64), col(7, np.float64),
    )


def build_bvh(v0, v1, v2, leaf_size=2):
    """Median-split BVH over triangles. Node boxes are padded by BOX_PAD so that
    axis-aligned triangles never sit exactly on a slab boundary."""
    tri_lo = np.minimum(np.minimum(v0, v1), v2)
    tri_hi = np.maximum(np.maximum(v0, v1), v2)
    cent = (tri_lo + tri_hi) * 0.5
    prim = np.arange(len(v0), dtype=np.int32)
    nodes = []

    def rec(s, e):
        idx = len(nodes)
        ids = prim[s:e]
        nodes.append([tri_lo[ids].min(0) - BOX_PAD, tri_hi[ids].max(0) + BOX_PAD, -1, -1, s, e - s, 0])
        if e - s <= leaf_size:
            return idx
        c = cent[ids]
        ax = int(np.argmax(c.max(0) - c.min(0)))
        mid = (e - s) // 2
        part = np.argsort(c[:, ax], kind="stable")
        prim[s:e] = ids[part]
        nodes[idx][6] = ax
        nodes[idx][2] = rec(s, s + mid)
        nodes[idx][3] = rec(s + mid, e)
        return idx

    rec(0, len(v0))
    return {
        "bmin": np.ascontiguousarray([n[0] for n in nodes], dtype=np.float64),
        "bmax": np.ascontiguousarray([n[1] for n in nodes], dtype=np.float64),
        "left": np.ascontiguousarray([n[2] for n in nodes], dtype=np.int32),
        "right": np.ascontiguousarray([n[3] for n in nodes], dtype=np.int32),
        "start": np.ascontiguousarray([n[4] for n in nodes], dtype=np.int32),
        "count": np.ascontiguousarray([n[5] for n in nodes], dtype=np.int32),
        "axis": np.ascontiguousarray([n[6] for n in nodes], dtype=np.int32),
        "prim": prim,
    }
