"""First-bounce path guiding from hemispherical radiance grids.

A guiding distribution is a normalized histogram over the (u, v) grid
parameterization (rows uniform in cos(theta), columns uniform in phi), sampled
by inverting its marginal row CDF and conditional column CDFs.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from lte.tracer import brdf
from lte.tracer.accel import Accel, build_bvh, intersect
from lte.tracer.integrators import (
    PATH_CTR,
    bake_radiance_grid,
    grid_bin_centers,
    grid_local_from_uv,
    local_to_bin,
    shading_normal,
    trace_radiance,
)
from lte.tracer.sampling import stream_keys, tangent_frame, to_local, to_world, uniform

log = logging.getLogger(__name__)

LUMA = np.array([0.2126, 0.7152, 0.0722])
VARIANCE_HEADER = ["pixel_x", "pixel_y", "var_guided", "var_brdf"]


@dataclass(frozen=True, eq=False)
class GuidingDistribution:
    mass: np.ndarray  # (R, C) probabilities, sum 1
    pdf: np.ndarray  # (R, C) sr^-1
    row_cdf: np.ndarray  # (R,)
    col_cdf: np.ndarray  # (R, C)
    is_fallback: bool = False

    @property
    def shape(self):
        return self.mass.shape

    @property
    def bin_solid_angle(self):
        R, C = self.mass.shape
        return 2 * np.pi / (R * C)

    @classmethod
    def from_weights(cls, weights, floor_frac=0.0):
        w = np.asarray(weights, dtype=np.float64)
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("guiding weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            log.debug("all-zero guiding product; falling back to uniform over the hemisphere")
            w = np.ones_like(w)
        elif floor_frac > 0:
            w = np.maximum(w, floor_frac * w.mean())
        mass = w / w.sum()
        fallback = total <= 0
        rows = mass.sum(1)
        row_cdf = np.cumsum(rows)
        row_cdf /= row_cdf[-1]
        col_cdf = np.cumsum(mass, axis=1) / np.maximum(rows[:, None], 1e-300)
        col_cdf[:, -1] = 1.0
        R, C = mass.shape
        return cls(mass, mass / (2 * np.pi / (R * C)), row_cdf, col_cdf, bool(fallback))

    def pdf_of(self, local):
        """Density (sr^-1) of local upper-hemisphere directions; 0 below the horizon."""
        R, C = self.mass.shape
        local = np.asarray(local, dtype=np.float64)
        u = 1.0 - local[..., 2]
        phi = np.mod(np.arctan2(local[..., 1], local[..., 0]), 2 * np.pi)
        r = np.clip((u * R).astype(np.int64), 0, R - 1)
        c = np.clip((phi / (2 * np.pi) * C).astype(np.int64), 0, C - 1)
        return np.where(local[..., 2] > 0, self.pdf[r, c], 0.0)


def luminance(rgb):
    return np.asarray(rgb) @ LUMA


def build_product_histogram(radiance_grid, material, wo_local, floor_frac=1e-3):
    """Guiding pdf proportional to lum(Li) * lum(f_r) * cos(theta) per bin.

    ``material`` is (kind, albedo, roughness); ``wo_local`` is the outgoing
    direction in the grid's tangent frame (z = normal).
    """
    grid = np.asarray(radiance_grid, dtype=np.float64)
    if not np.all(np.isfinite(grid)) or np.any(grid < 0):
        raise ValueError("radiance grid must be finite and non-negative")
    res_r, res_c = grid.shape[:2]
    if res_r == res_c:
        wi = grid_bin_centers(res_r)
    else:
        u = (np.arange(res_r) + 0.5) / res_r
        v = (np.arange(res_c) + 0.5) / res_c
        wi = grid_local_from_uv(*np.meshgrid(u, v, indexing="ij"))
    kind, albedo, rough = material
    n = np.array([0.0, 0.0, 1.0])
    wo = np.broadcast_to(np.asarray(wo_local, dtype=np.float64), wi.shape)
    f = brdf.eval_brdf(kind, albedo, rough, wi, wo, n)
    cos_t = wi[..., 2]
    w = luminance(grid) * luminance(f) * cos_t * (2 * np.pi / (res_r * res_c))
    return GuidingDistribution.from_weights(np.maximum(w, 0.0), floor_frac)


def cdf_invert_sample(dist: GuidingDistribution, u1, u2):
    """Sample bins by CDF inversion; the leftover fraction of u jitters within the bin.

    Returns (local direction (..., 3), pdf sr^-1, row, col).
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    R, C = dist.mass.shape
    row = np.minimum(np.searchsorted(dist.row_cdf, u1, side="right"), R - 1)
    lo_r = np.where(row > 0, dist.row_cdf[np.maximum(row - 1, 0)], 0.0)
    jr = np.clip((u1 - lo_r) / np.maximum(dist.row_cdf[row] - lo_r, 1e-300), 0.0, 1.0 - 1e-12)
    cc = dist.col_cdf[row]
    col = np.minimum((cc <= u2[..., None]).sum(-1), C - 1)
    lo_c = np.where(col > 0, np.take_along_axis(cc, np.maximum(col - 1, 0)[..., None], -1)[..., 0], 0.0)
    hi_c = np.take_along_axis(cc, col[..., None], -1)[..., 0]
    jc = np.clip((u2 - lo_c) / np.maximum(hi_c - lo_c, 1e-300), 0.0, 1.0 - 1e-12)
    local = grid_local_from_uv((row + jr) / R, (col + jc) / C)
    return local, dist.pdf[row, col], row, col


# ---------------------------------------------------------------- rendering

@dataclass
class GuidedRender:
    image: np.ndarray  # (H, W, 3) mean over spp
    variance: np.ndarray  # (H, W) per-pixel sample variance of luminance
    samples: np.ndarray  # (H, W, spp, 3)


def first_hits(accel, camera, spp, seed):
    W, H = camera.width, camera.height
    pix = np.arange(W * H)
    keys = stream_keys(seed, np.repeat(pix, spp), np.tile(np.arange(spp), W * H))
    px = np.repeat(pix % W, spp) + (uniform(keys, 0) if spp > 1 else 0.5)
    py = np.repeat(pix // W, spp) + (uniform(keys, 1) if spp > 1 else 0.5)
    d = camera.rays(px, py)
    o = np.broadcast_to(np.asarray(camera.origin, dtype=np.float64), d.shape).copy()
    return keys, o, d, intersect(accel, o, d)


def guidance_points(scene, camera):
    """Pixel-center primary hits: (positions, shading normals facing the camera, valid mask)."""
    accel = scene if isinstance(scene, Accel) else build_bvh(scene)
    _, _, d, hit = first_hits(accel, camera, 1, 0)
    return hit.position, shading_normal(hit.normal, d), hit.valid


def bake_guidance(scene, camera, spp_per_bin=16, seed=1, max_depth=5):
    """Ground-truth radiance grids at every pixel-center primary hit, (H, W, 32, 32, 3)."""
    accel = scene if isinstance(scene, Accel) else build_bvh(scene)
    pos, nrm, ok = guidance_points(accel, camera)
    grids = np.zeros((len(pos), 32, 32, 3))
    if ok.any():
        grids[ok] = bake_radiance_grid(accel, pos[ok], nrm[ok], spp_per_bin=spp_per_bin, max_depth=max_depth,
                                       seed=seed)
    return grids.reshape(camera.height, camera.width, 32, 32, 3)


def guided_render(scene, camera=None, guidance=None, spp=2, mix_brdf=0.5, seed=0, max_depth=5,
                  floor_frac=1e-3):
    """Path-traced image whose first bounce samples a one-sample MIS mixture of BRDF and guiding pdfs.

    ``guidance`` is (H, W, R, C, 3) radiance grids per pixel (baked or predicted), in the
    tangent frame of the camera-facing shading normal; None means BRDF sampling only.
    ``mix_brdf`` is the probability of the BRDF technique; 0 gives pure guiding.
    """
    accel = scene if isinstance(scene, Accel) else build_bvh(scene)
    cam = camera or accel.scene.camera
    W, H = cam.width, cam.height
    keys, o, d, hit = first_hits(accel, cam, spp, seed)
    n_s = len(d)
    L = np.zeros((n_s, 3))
    ok = hit.valid
    p = accel.packed
    cos_o = -(hit.normal * d).sum(1)
    front = ok & (cos_o > 0)
    L[front] += p["emission"][hit.material[front]]
    if max_depth > 1 and ok.any():
        idx = np.flatnonzero(ok)
        x = hit.position[idx]
        nrm = shading_normal(hit.normal[idx], d[idx])
        m = hit.material[idx]
        kind, albedo, rough = p["kind"][m], p["albedo"][m], p["roughness"][m]
        wo = -d[idx]
        frame = tangent_frame(nrm)
        k = keys[idx]
        u0, u1, u2 = uniform(k, 2), uniform(k, 3), uniform(k, 4)
        wi = brdf.sample_brdf(kind, rough, wo, frame, u1, u2)
        pdf_g = np.zeros(len(idx))
        mix = np.ones(len(idx))
        if guidance is not None and mix_brdf < 1.0:
            g_all = np.asarray(guidance)
            g_all = g_all.reshape(W * H, *g_all.shape[2:])
            pix = idx // spp
            wo_local = to_local(wo, frame)
            # one distribution per pixel, from its first sample; emitters reflect nothing and stay unguided
            dists = {}
            for j in np.unique(pix):
                rows = np.flatnonzero(pix == j)
                mj = int(m[rows[0]])
                if p["kind"][mj] == brdf.EMITTER:
                    continue
                dists[j] = (rows, build_product_histogram(
                    g_all[j], (p["kind"][mj], p["albedo"][mj], p["roughness"][mj]), wo_local[rows[0]], floor_frac))
            for rows, dist in dists.values():
                mix[rows] = mix_brdf
                gr = rows[u0[rows] >= mix_brdf]
                if len(gr):
                    local, _, _, _ = cdf_invert_sample(dist, u1[gr], u2[gr])
                    wi[gr] = to_world(local, tuple(f[gr] for f in frame))
                pdf_g[rows] = dist.pdf_of(to_local(wi[rows], tuple(f[rows] for f in frame)))
            n_fb = sum(d.is_fallback for _, d in dists.values())
            if n_fb:
                log.warning("%d of %d shading points had an all-zero guiding product; used uniform",
                            n_fb, len(dists))
        pdf_b = brdf.pdf_brdf(kind, rough, wi, wo, nrm)
        pdf = mix * pdf_b + (1.0 - mix) * pdf_g
        f = brdf.eval_brdf(kind, albedo, rough, wi, wo, nrm)
        cos_i = (wi * nrm).sum(1)
        valid = (cos_i > 0) & (pdf > 0)
        weight = np.zeros((len(idx), 3))
        weight[valid] = f[valid] * (cos_i[valid] / pdf[valid])[:, None]
        live = np.flatnonzero(valid & (weight.max(1) > 0))
        if len(live):
            Li = trace_radiance(accel, x[live], wi[live], k[live], max_depth - 1, ctr_base=PATH_CTR + 3)
            L[idx[live]] += weight[live] * Li
    samples = L.reshape(H, W, spp, 3)
    lum = luminance(samples)
    var = lum.var(axis=2, ddof=1) if spp > 1 else np.zeros((H, W))
    return GuidedRender(samples.mean(2), var, samples)


def write_variance_csv(path, var_guided, var_brdf):
    H, W = var_guided.shape
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(VARIANCE_HEADER)
        for y in range(H):
            for x in range(W):
                w.writerow([x, y, f"{var_guided[y, x]:.9g}", f"{var_brdf[y, x]:.9g}"])


def guidance_from_model(model, scene, camera, cloud, batch=64):
    """Predicted radiance grids at pixel-center primary hits, (H, W, 32, 32, 3)."""
    from lte.sampling import QueryPointSet

    pos, nrm, ok = guidance_points(scene, camera)
    _, albedo, _, _ = scene.material_table()
    accel = build_bvh(scene)
    _, _, _, hit = first_hits(accel, camera, 1, 0)
    alb = np.zeros((len(pos), 3))
    alb[ok] = albedo[hit.material[ok]]
    grids = np.zeros((len(pos), 32, 32, 3), dtype=np.float64)
    if ok.any():
        emb = model.embed(cloud)
        q = QueryPointSet(pos[ok], nrm[ok], alb[ok])
        grids[ok] = model.predict_grid(emb, q, batch=batch)
    return grids.reshape(camera.height, camera.width, 32, 32, 3)
