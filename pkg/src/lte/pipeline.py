"""Image-space helpers shared by the CLI: per-pixel query points, predicted and oracle renders."""
from __future__ import annotations

import numpy as np

from lte.sampling import QueryPointSet
from lte.tracer import brdf
from lte.tracer.accel import Accel, build_bvh
from lte.tracer.integrators import bake_irradiance, trace_direct
from lte.guiding import first_hits, guided_render


def pixel_queries(scene, camera):
    """One query per pixel at the center-ray primary hit.

    Returns (QueryPointSet over shadeable hits, flat pixel indices, accel). Misses and
    emitter surfaces get no query.
    """
    accel = scene if isinstance(scene, Accel) else build_bvh(scene)
    _, _, d, hit = first_hits(accel, camera, 1, 0)
    kind = accel.packed["kind"]
    ok = hit.valid.copy()
    ok[ok] = kind[hit.material[ok]] != brdf.EMITTER
    pix = np.flatnonzero(ok)
    n = hit.normal[pix]
    flip = (n * d[pix]).sum(1) > 0
    n = np.where(flip[:, None], -n, n)
    albedo = accel.packed["albedo"][hit.material[pix]]
    return QueryPointSet(hit.position[pix], n, albedo), pix, accel


def scatter_image(values, pix, camera):
    img = np.zeros((camera.height * camera.width, 3), dtype=np.float32)
    img[pix] = values
    return img.reshape(camera.height, camera.width, 3)


def predicted_irradiance_image(model, cloud, scene, camera, embedding=None):
    q, pix, _ = pixel_queries(scene, camera)
    if len(q) == 0:
        return np.zeros((camera.height, camera.width, 3), dtype=np.float32)
    emb = embedding if embedding is not None else model.embed(cloud)
    return scatter_image(model.predict_irradiance(emb, q), pix, camera)


def oracle_irradiance_image(scene, camera, rays=1024, seed=0, include_direct=False):
    q, pix, accel = pixel_queries(scene, camera)
    if len(q) == 0:
        return np.zeros((camera.height, camera.width, 3), dtype=np.float32)
    E = bake_irradiance(accel, q.positions, q.normals, rays_per_point=rays, seed=seed,
                        include_direct=include_direct)
    return scatter_image(E, pix, camera)


def compose_full(scene, camera, irradiance_image, target="indirect", spp=16, seed=0):
    """Direct lighting + albedo/pi * predicted irradiance.

    For an ``indirect`` model the direct part is the traced direct image; for a total
    irradiance model only visible emission is traced, since the prediction already holds
    the direct light.
    """
    q, pix, accel = pixel_queries(scene, camera)
    if target == "indirect":
        base = trace_direct(accel, camera, spp=spp, seed=seed)
    else:
        base = guided_render(accel, camera, None, spp=spp, seed=seed, max_depth=1).image
    rho = np.zeros((camera.height * camera.width, 3))
    rho[pix] = q.albedo / np.pi
    return (base + rho.reshape(base.shape) * irradiance_image).astype(np.float32)


def oracle_full_image(scene, camera, spp=64, seed=0, max_depth=5):
    """Plain path-traced radiance with BRDF sampling."""
    return guided_render(scene, camera, None, spp=spp, seed=seed, max_depth=max_depth).image.astype(np.float32)


def box_downsample(image, factor):
    H, W = image.shape[:2]
    return image.reshape(H // factor, factor, W // factor, factor, -1).mean((1, 3))
