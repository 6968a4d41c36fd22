from dataclasses import dataclass

import numpy as np

from lte import kernels

EPS_RAY = 1e-4


@dataclass(frozen=True, eq=False)
class Accel:
    """Packed triangle/material arrays plus BVH, as consumed by the kernels."""

    scene: object
    packed: dict
    emitter_tris: np.ndarray
    emitter_cdf: np.ndarray
    emitter_area: float


@dataclass(frozen=True)
class Hit:
    t: np.ndarray
    triangle: np.ndarray  # -1 on miss
    position: np.ndarray
    normal: np.ndarray  # geometric == shading normal (flat)
    material: np.ndarray  # -1 on miss

    @property
    def valid(self):
        return self.triangle >= 0


def build_bvh(scene):
    v = np.ascontiguousarray(scene.vertices, dtype=np.float64)
    kind, albedo, rough, emit = scene.material_table()
    packed = {
        "v0": np.ascontiguousarray(v[:, 0]),
        "e1": np.ascontiguousarray(v[:, 1] - v[:, 0]),
        "e2": np.ascontiguousarray(v[:, 2] - v[:, 0]),
        "normal": np.ascontiguousarray(scene.face_normals()),
        "mat": np.ascontiguousarray(scene.material_ids, dtype=np.int32),
        "kind": kind,
        "albedo": np.ascontiguousarray(albedo),
        "roughness": np.ascontiguousarray(rough),
        "emission": np.ascontiguousarray(emit),
    }
    packed.update(kernels.build_bvh(v[:, 0], v[:, 1], v[:, 2]))
    em = np.flatnonzero(scene.emitter_mask())
    area = scene.areas()[em]
    cdf = np.cumsum(area) / area.sum() if len(em) else np.zeros(0)
    return Accel(scene, packed, em, cdf, float(area.sum()) if len(em) else 0.0)


def intersect(accel, origins, dirs, tmax=None, backend=None):
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    if tmax is None:
        tmax = np.full(len(origins), np.inf)
    tmax = np.ascontiguousarray(np.broadcast_to(tmax, (len(origins),)), dtype=np.float64)
    t, tri = kernels.intersect(accel.packed, origins, dirs, tmax, backend=backend)
    hit = tri >= 0
    pos = origins + np.where(hit, t, 0.0)[:, None] * dirs
    normal = np.zeros_like(origins)
    normal[hit] = accel.packed["normal"][tri[hit]]
    mat = np.full(len(origins), -1, dtype=np.int64)
    mat[hit] = accel.packed["mat"][tri[hit]]
    return Hit(t, tri, pos, normal, mat)


def intersect_linear(accel, origins, dirs, tmax=None):
    """Brute-force scan over every triangle (the oracle for BVH traversal)."""
    return intersect(accel, origins, dirs, tmax, backend="python")
