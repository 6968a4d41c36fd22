"""Lambertian and GGX-conductor reflectance (vectorized, world-space directions)."""
import numpy as np

LAMBERTIAN, CONDUCTOR_GGX, EMITTER = 0, 1, 2


def _dot(a, b):
    return (a * b).sum(-1)


def ggx_d(cos_h, alpha):
    a2 = alpha * alpha
    k = cos_h * cos_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * k * k)


def smith_lambda(cos_t, alpha):
    c2 = cos_t * cos_t
    return 0.5 * (-1.0 + np.sqrt(1.0 + alpha * alpha * (1.0 - c2) / c2))


def eval_brdf(kind, albedo, roughness, wi, wo, n):
    """f_r(wi, wo) in sr^-1 for per-sample materials; zero below either horizon.

    conductor_ggx: D * F * G / (4 cos_i cos_o) with alpha = roughness^2, height-correlated
    Smith G and Schlick Fresnel using the albedo as F0.
    """
    wi, wo, n = (np.asarray(x, dtype=np.float64) for x in (wi, wo, n))
    kind = np.broadcast_to(np.asarray(kind), wi.shape[:-1])
    albedo = np.broadcast_to(np.asarray(albedo, dtype=np.float64), wi.shape[:-1] + (3,))
    roughness = np.broadcast_to(np.asarray(roughness, dtype=np.float64), wi.shape[:-1])
    ci, co = _dot(wi, n), _dot(wo, n)
    above = (ci > 0) & (co > 0)
    out = np.where((kind != CONDUCTOR_GGX)[..., None], albedo / np.pi, 0.0)
    g = (kind == CONDUCTOR_GGX) & above
    if np.any(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            h = wi + wo
            h = h / np.linalg.norm(h, axis=-1, keepdims=True)
            alpha = roughness * roughness
            d = ggx_d(_dot(h, n), alpha)
            g2 = 1.0 / (1.0 + smith_lambda(co, alpha) + smith_lambda(ci, alpha))
            wh = np.clip(_dot(wi, h), 0.0, 1.0)
            fr = albedo + (1.0 - albedo) * ((1.0 - wh) ** 5)[..., None]
            spec = fr * (d * g2 / (4.0 * ci * co))[..., None]
        out = np.where(g[..., None], spec, out)
    return np.where(above[..., None], out, 0.0)


def pdf_brdf(kind, roughness, wi, wo, n):
    """Density (sr^-1) of the BRDF sampling routine used by the tracer."""
    wi, wo, n = (np.asarray(x, dtype=np.float64) for x in (wi, wo, n))
    kind = np.broadcast_to(np.asarray(kind), wi.shape[:-1])
    roughness = np.broadcast_to(np.asarray(roughness, dtype=np.float64), wi.shape[:-1])
    ci, co = _dot(wi, n), _dot(wo, n)
    pdf = np.maximum(ci, 0.0) / np.pi
    g = kind == CONDUCTOR_GGX
    if np.any(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            h = wi + wo
            h = h / np.linalg.norm(h, axis=-1, keepdims=True)
            ch = _dot(h, n)
            pg = ggx_d(ch, roughness * roughness) * ch / (4.0 * np.abs(_dot(wo, h)))
        pdf = np.where(g, np.where((ci > 0) & (co > 0) & (ch > 0), pg, 0.0), pdf)
    return np.where(co > 0, pdf, 0.0)


def sample_brdf(kind, roughness, wo, frame, u1, u2):
    """BRDF-proportional direction (cosine for diffuse, GGX normal sampling for conductors).
    Returns world directions; invalid (below-horizon) samples come back with n.wi <= 0."""
    t, b, n = frame
    kind = np.broadcast_to(np.asarray(kind), u1.shape)
    roughness = np.broadcast_to(np.asarray(roughness, dtype=np.float64), u1.shape)
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    local = np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(1.0 - u1)], -1)
    wi = local[..., 0:1] * t + local[..., 1:2] * b + local[..., 2:3] * n
    g = kind == CONDUCTOR_GGX
    if np.any(g):
        a2 = (roughness * roughness) ** 2
        tan2 = a2 * u1 / (1.0 - u1)
        ch = 1.0 / np.sqrt(1.0 + tan2)
        sh = np.sqrt(1.0 - ch * ch)
        h = (sh * np.cos(phi))[..., None] * t + (sh * np.sin(phi))[..., None] * b + ch[..., None] * n
        woh = _dot(wo, h)
        refl = -wo + (2.0 * woh)[..., None] * h
        wi = np.where(g[..., None], refl, wi)
    return wi
