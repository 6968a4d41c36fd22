"""Point clouds drawn from scene surfaces, and the geometric kernels run on them."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from lte import kernels
from lte.scene import KINDS, SceneError

log = logging.getLogger(__name__)

_EMITTER = KINDS.index("emitter")


@dataclass(frozen=True, eq=False)
class ScenePointCloud:
    """The network's view of a scene: M surface samples with their attributes."""

    positions: np.ndarray  # (M, 3)
    normals: np.ndarray  # (M, 3)
    albedo: np.ndarray  # (M, 3)
    emission: np.ndarray  # (M, 3)
    roughness: np.ndarray  # (M,)

    def __len__(self):
        return len(self.positions)

    def features(self):
        """(M, 13): position, normal, albedo, emission, roughness."""
        return np.concatenate(
            [self.positions, self.normals, self.albedo, self.emission, self.roughness[:, None]], axis=1
        )

    def take(self, idx):
        return ScenePointCloud(*(np.ascontiguousarray(a[idx]) for a in
                                 (self.positions, self.normals, self.albedo, self.emission, self.roughness)))


@dataclass(frozen=True, eq=False)
class QueryPointSet:
    positions: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3)
    albedo: np.ndarray  # (N, 3)
    targets: np.ndarray | None = None  # (N, 3) irradiance or (N, 32, 32, 3) radiance grids

    def __len__(self):
        return len(self.positions)

    def with_targets(self, targets):
        targets = np.asarray(targets)
        if len(targets) != len(self):
            raise ValueError(f"{len(targets)} targets for {len(self)} query points")
        if not np.all(np.isfinite(targets)) or np.any(targets < 0):
            raise ValueError("targets must be finite and non-negative")
        return QueryPointSet(self.positions, self.normals, self.albedo, targets)

    def take(self, idx):
        t = None if self.targets is None else self.targets[idx]
        return QueryPointSet(self.positions[idx], self.normals[idx], self.albedo[idx], t)


def _sample_triangles(scene, tri_ids, count, seed, stream):
    if count < 1:
        raise ValueError("count must be >= 1")
    areas = scene.areas()[tri_ids]
    total = areas.sum()
    if not total > 0:
        raise SceneError("scene has zero total surface area")
    rng = np.random.default_rng([seed, stream])
    pick = tri_ids[np.minimum(np.searchsorted(np.cumsum(areas) / total, rng.random(count), side="right"),
                              len(tri_ids) - 1)]
    u1, u2 = rng.random(count), rng.random(count)
    su = np.sqrt(u1)
    b1, b2 = su * (1.0 - u2), su * u2
    v = scene.vertices[pick]
    pos = v[:, 0] + b1[:, None] * (v[:, 1] - v[:, 0]) + b2[:, None] * (v[:, 2] - v[:, 0])
    return pick, pos


def sample_surface_points(scene, count, seed=0):
    """Area-uniform samples over every triangle, emitters included."""
    pick, pos = _sample_triangles(scene, np.arange(scene.num_triangles), count, seed, 0)
    kind, albedo, rough, emit = scene.material_table()
    m = scene.material_ids[pick]
    return ScenePointCloud(
        positions=pos,
        normals=scene.face_normals()[pick],
        albedo=albedo[m],
        emission=emit[m],
        roughness=rough[m],
    )


def shadeable_triangles(scene):
    kind = scene.material_table()[0][scene.material_ids]
    return np.flatnonzero((kind != _EMITTER) & ~scene.emitter_mask())


def sample_query_points(scene, count, seed=0):
    """Area-uniform shading points on non-emitting surfaces."""
    tris = shadeable_triangles(scene)
    if len(tris) == 0:
        raise SceneError("no shadeable surface in scene")
    pick, pos = _sample_triangles(scene, tris, count, seed, 1)
    albedo = scene.material_table()[1]
    return QueryPointSet(pos, scene.face_normals()[pick], albedo[scene.material_ids[pick]])


# ----------------------------------------------------------------- kernels

def farthest_point_sample(positions, m, start_index=0, backend=None):
    """Greedy max-min subsampling; ties go to the lowest index."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    n = len(pos)
    if not 1 <= m <= n:
        raise ValueError(f"farthest_point_sample: need 1 <= m <= {n}, got m={m}")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index {start_index} out of range")
    return kernels.fps(pos, int(m), int(start_index), backend=backend)


class KNN:
    """Exact k-nearest-neighbour index over fixed targets (kd-tree, brute-force fallback)."""

    def __init__(self, targets, leaf_size=16):
        self.targets = np.ascontiguousarray(targets, dtype=np.float64)
        self.tree = kernels.build_kdtree(self.targets, leaf_size)

    def __len__(self):
        return len(self.targets)

    def query(self, queries, k, backend=None):
        """(indices, distances), each (n, k), ascending distance, ties to lower index."""
        if k < 1 or k > len(self):
            raise ValueError(f"knn: k={k} must lie in [1, {len(self)}]")
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        idx, d2 = kernels.kdtree_query(self.tree, q, int(k), backend=backend)
        return idx, np.sqrt(d2)


def knn(target_positions, query_positions, k, backend=None):
    return KNN(target_positions).query(query_positions, k, backend=backend)


def knn_linear(target_positions, query_positions, k):
    """Linear-scan oracle with the same contract as :func:`knn`."""
    t = np.ascontiguousarray(target_positions, dtype=np.float64)
    if k < 1 or k > len(t):
        raise ValueError(f"knn: k={k} must lie in [1, {len(t)}]")
    idx, d2 = kernels.fallback.knn_bruteforce(t, np.asarray(query_positions, dtype=np.float64).reshape(-1, 3), k)
    return idx, np.sqrt(d2)


def _spread_bits(v):
    """Insert two zero bits between each of the low 16 bits."""
    v = v.astype(np.uint64) & np.uint64(0xFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_code(grid):
    """Interleave integer grid coords (n, 3): x lowest, then y, then z."""
    g = np.asarray(grid)
    return _spread_bits(g[:, 0]) | (_spread_bits(g[:, 1]) << np.uint64(1)) | (_spread_bits(g[:, 2]) << np.uint64(2))


def quantize(positions, bits_per_axis):
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    lo, hi = pos.min(0), pos.max(0)
    ext = hi - lo
    cells = (1 << bits_per_axis) - 1
    flat = ext <= 0
    if flat.any():
        log.info("serialize_zorder: degenerate extent on axes %s, quantized to 0", np.flatnonzero(flat).tolist())
    scale = np.where(flat, 0.0, cells / np.where(flat, 1.0, ext))
    return np.clip(np.floor((pos - lo) * scale + 0.5), 0, cells).astype(np.int64)


def serialize_zorder(positions, bits_per_axis=10):
    """Permutation sorting points by Morton code, ties by original index."""
    if not 4 <= bits_per_axis <= 16:
        raise ValueError(f"bits_per_axis must lie in [4, 16], got {bits_per_axis}")
    if len(positions) == 0:
        return np.zeros(0, dtype=np.int64)
    codes = morton_code(quantize(positions, bits_per_axis))
    return np.argsort(codes, kind="stable")


def canonical_order(positions):
    """Sort key (x, y, z, original index) that makes tie-breaking order independent."""
    p = np.asarray(positions)
    return np.lexsort((np.arange(len(p)), p[:, 2], p[:, 1], p[:, 0]))
