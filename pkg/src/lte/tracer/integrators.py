"""Ground-truth estimators: irradiance and radiance-grid baking, direct lighting renders.

Path semantics shared by every estimator: a cast ray gathers front-face emission
at each surface interaction, up to ``max_depth`` interactions, with BRDF
importance-sampled continuation and no Russian roulette.
"""
import logging

import numpy as np

from lte import kernels
from lte.tracer import brdf
from lte.tracer.accel import Accel, build_bvh, intersect
from lte.tracer.sampling import (
    TWO_PI,
    cosine_local,
    stratified_2d,
    stream_keys,
    tangent_frame,
    to_world,
    uniform,
)

log = logging.getLogger(__name__)

GRID_RES = 32
PATH_CTR = 2  # counters 0, 1 drive the primary direction; the path continues from 2
_PATHS_PER_CALL = 1 << 17


def _accel(scene_or_accel):
    return scene_or_accel if isinstance(scene_or_accel, Accel) else build_bvh(scene_or_accel)


def _finite_mean(L, axis, what):
    bad = ~np.isfinite(L).all(axis=-1)
    if bad.any():
        log.warning("%s: rejected %d non-finite samples", what, int(bad.sum()))
        L = np.where(bad[..., None], 0.0, L)
        cnt = np.maximum((~bad).sum(axis=axis), 1)[..., None]
        return L.sum(axis=axis) / cnt
    return L.mean(axis=axis)


def _first_emission(accel, origins, dirs):
    hit = intersect(accel, origins, dirs)
    out = np.zeros_like(origins)
    ok = hit.valid
    cos_o = -(hit.normal * dirs).sum(-1)
    front = ok & (cos_o > 0)
    out[front] = accel.packed["emission"][hit.material[front]]
    return out


def trace_radiance(accel, origins, dirs, keys, max_depth=5, ctr_base=PATH_CTR, backend=None):
    """Incoming radiance along rays; ``keys`` give each path its random stream."""
    return kernels.trace_paths(
        accel.packed,
        np.ascontiguousarray(origins, dtype=np.float64),
        np.ascontiguousarray(dirs, dtype=np.float64),
        np.ascontiguousarray(keys, dtype=np.uint64),
        int(max_depth),
        int(ctr_base),
        backend=backend,
    )


def bake_irradiance(scene, positions, normals, rays_per_point=1024, max_depth=5, seed=0,
                    include_direct=True, backend=None, point_offset=0):
    """E(q) = (pi / R) * sum of path radiance over R stratified cosine-weighted rays.

    With ``include_direct=False`` the emission seen at the first vertex is dropped,
    leaving the multi-bounce part only. ``point_offset`` shifts the per-point stream
    index so a large set can be baked in pieces with identical results.
    """
    accel = _accel(scene)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    n, R = len(positions), int(rays_per_point)
    out = np.zeros((n, 3))
    per = max(1, _PATHS_PER_CALL // R)
    for s in range(0, n, per):
        e = min(n, s + per)
        idx = np.arange(s, e) + point_offset
        keys = stream_keys(seed, idx[:, None], np.arange(R)[None, :])
        u1, u2 = stratified_2d(R, uniform(keys, 0), uniform(keys, 1))
        frame = tangent_frame(normals[s:e])
        frame = tuple(np.repeat(f, R, axis=0) for f in frame)
        dirs = to_world(cosine_local(u1.reshape(-1), u2.reshape(-1)), frame)
        org = np.repeat(positions[s:e], R, axis=0)
        L = trace_radiance(accel, org, dirs, keys.reshape(-1), max_depth, backend=backend)
        if not include_direct:
            L = L - _first_emission(accel, org, dirs)
        out[s:e] = np.pi * _finite_mean(L.reshape(e - s, R, 3), 1, "bake_irradiance")
    return out


def grid_bin_centers(res=GRID_RES):
    """Local directions at bin centers, (res, res, 3), rows uniform in cos(theta)."""
    u = (np.arange(res) + 0.5) / res
    cos_t = 1.0 - u
    phi = TWO_PI * (np.arange(res) + 0.5) / res
    sin_t = np.sqrt(1.0 - cos_t * cos_t)
    return np.stack([
        sin_t[:, None] * np.cos(phi)[None, :],
        sin_t[:, None] * np.sin(phi)[None, :],
        np.broadcast_to(cos_t[:, None], (res, res)),
    ], axis=-1)


def bin_solid_angle(res=GRID_RES):
    return TWO_PI / (res * res)


def grid_local_from_uv(u, v):
    cos_t = 1.0 - u
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = TWO_PI * v
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def local_to_bin(local, res=GRID_RES):
    """(row, col) of the bin containing a local upper-hemisphere direction."""
    u = 1.0 - local[..., 2]
    phi = np.mod(np.arctan2(local[..., 1], local[..., 0]), TWO_PI)
    row = np.clip((u * res).astype(np.int64), 0, res - 1)
    col = np.clip((phi / TWO_PI * res).astype(np.int64), 0, res - 1)
    return row, col


def bake_radiance_grid(scene, positions, normals, spp_per_bin=64, max_depth=5, seed=0,
                       res=GRID_RES, backend=None, point_offset=0):
    """Average incoming radiance per hemispherical bin, (N, res, res, 3)."""
    accel = _accel(scene)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    per_point = res * res * spp_per_bin
    out = np.zeros((n, res, res, 3))
    row = np.repeat(np.arange(res * res) // res, spp_per_bin)
    col = np.repeat(np.arange(res * res) % res, spp_per_bin)
    step = max(1, _PATHS_PER_CALL // per_point)
    for s in range(0, n, step):
        e = min(n, s + step)
        idx = np.arange(s, e) + point_offset
        keys = stream_keys(seed, idx[:, None], np.arange(per_point)[None, :])
        u = (row[None, :] + uniform(keys, 0)) / res
        v = (col[None, :] + uniform(keys, 1)) / res
        frame = tuple(np.repeat(f, per_point, axis=0) for f in tangent_frame(normals[s:e]))
        dirs = to_world(grid_local_from_uv(u.reshape(-1), v.reshape(-1)), frame)
        org = np.repeat(positions[s:e], per_point, axis=0)
        L = trace_radiance(accel, org, dirs, keys.reshape(-1), max_depth, backend=backend)
        L = L.reshape(e - s, res * res, spp_per_bin, 3)
        out[s:e] = _finite_mean(L, 2, "bake_radiance_grid").reshape(e - s, res, res, 3)
    return out


def grid_irradiance(grid):
    """Cosine-weighted Riemann sum of a radiance grid: sum_bins L cos(theta_c) dOmega."""
    res = grid.shape[-2]
    cos_c = grid_bin_centers(res)[..., 2]
    return (grid * cos_c[..., None]).sum(axis=(-3, -2)) * bin_solid_angle(res)


# ------------------------------------------------------------ direct light

def sample_emitters(accel, u0, u1, u2):
    """Uniform-area point on the union of emitters: (point, normal, radiance, pdf_area)."""
    if len(accel.emitter_tris) == 0:
        raise ValueError("scene has no emitters")
    pick = np.minimum(np.searchsorted(accel.emitter_cdf, u0, side="right"), len(accel.emitter_tris) - 1)
    tri = accel.emitter_tris[pick]
    p = accel.packed
    su = np.sqrt(u1)
    b1 = 1.0 - su
    b2 = u2 * su
    pts = p["v0"][tri] + b1[:, None] * p["e1"][tri] + b2[:, None] * p["e2"][tri]
    return pts, p["normal"][tri], p["emission"][p["mat"][tri]], np.full(len(tri), 1.0 / accel.emitter_area)


def _light_sample(accel, x, keys, ctr):
    y, ny, Le, pdf = sample_emitters(accel, uniform(keys, ctr), uniform(keys, ctr + 1), uniform(keys, ctr + 2))
    d = y - x
    dist = np.linalg.norm(d, axis=1)
    wi = d / dist[:, None]
    cos_l = -(ny * wi).sum(1)
    blocked = intersect(accel, x, wi, tmax=dist - 1e-4).valid
    g = np.where((cos_l > 0) & ~blocked, cos_l / (dist * dist), 0.0)
    return wi, Le * (g / pdf)[:, None]


def direct_irradiance(scene, positions, normals, samples=256, seed=0):
    """Irradiance from emitters only, by uniform-area light sampling."""
    accel = _accel(scene)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    keys = stream_keys(seed, np.repeat(np.arange(n), samples), np.tile(np.arange(samples), n))
    x = np.repeat(positions, samples, axis=0)
    nx = np.repeat(normals, samples, axis=0)
    wi, contrib = _light_sample(accel, x, keys, 0)
    cos_x = np.maximum((nx * wi).sum(1), 0.0)
    return (contrib * cos_x[:, None]).reshape(n, samples, 3).mean(1)


def primary_hits(accel, camera, px, py):
    o = np.broadcast_to(np.asarray(camera.origin, dtype=np.float64), (px.size, 3)).copy()
    d = camera.rays(px.reshape(-1), py.reshape(-1))
    return o, d, intersect(accel, o, d)


def shading_normal(hit_normal, d):
    """Flip flat normals to face the incoming ray (two-sided surfaces)."""
    flip = (hit_normal * d).sum(-1) > 0
    return np.where(flip[:, None], -hit_normal, hit_normal)


def trace_direct(scene, camera=None, spp=1, seed=0):
    """HDR image of visible emission plus one light sample of direct lighting per camera sample."""
    accel = _accel(scene)
    cam = camera or accel.scene.camera
    W, H = cam.width, cam.height
    pix = np.arange(W * H)
    keys = stream_keys(seed, np.repeat(pix, spp), np.tile(np.arange(spp), W * H))
    # one sample per pixel goes through the center; more are jittered
    jx = uniform(keys, 0) if spp > 1 else 0.5
    jy = uniform(keys, 1) if spp > 1 else 0.5
    px = np.repeat(pix % W, spp) + jx
    py = np.repeat(pix // W, spp) + jy
    _, d, hit = primary_hits(accel, cam, px, py)
    L = np.zeros((len(px), 3))
    ok = hit.valid
    cos_o = -(hit.normal * d).sum(1)
    front = ok & (cos_o > 0)
    L[front] += accel.packed["emission"][hit.material[front]]
    if len(accel.emitter_tris) and ok.any():
        idx = np.flatnonzero(ok)
        x = hit.position[idx]
        n = shading_normal(hit.normal[idx], d[idx])
        m = hit.material[idx]
        wi, contrib = _light_sample(accel, x, keys[idx], 2)
        kind, albedo, rough = accel.packed["kind"][m], accel.packed["albedo"][m], accel.packed["roughness"][m]
        f = brdf.eval_brdf(kind, albedo, rough, wi, -d[idx], n)
        cos_x = np.maximum((n * wi).sum(1), 0.0)
        L[idx] += f * contrib * cos_x[:, None]
    return L.reshape(H, W, spp, 3).mean(2)
