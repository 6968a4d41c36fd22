"""Tangent frames, hemisphere warps, and the counter-based random streams."""
import numpy as np

from lte.kernels import fallback

TWO_PI = 2.0 * np.pi
GOLDEN = np.uint64(0x9E3779B97F4A7C15)

mix64 = fallback.mix64
uniform = fallback.uniform


def stream_keys(seed, a, b=0):
    """Independent 64-bit stream key per (seed, a, b), e.g. (seed, point index, sample index)."""
    with np.errstate(over="ignore"):
        s = mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(0x5EED5EED5EED5EED))
        k = mix64(s ^ np.asarray(a, dtype=np.uint64))
        return mix64(k + np.asarray(b, dtype=np.uint64) * GOLDEN)


def tangent_frame(n):
    """Right-handed orthonormal (t, b, n) from unit normals, branchless construction."""
    n = np.asarray(n, dtype=np.float64).reshape(-1, 3)
    t, b = fallback.frame_from(n)
    return t, b, n


def to_world(local, frame):
    t, b, n = frame
    return local[..., 0:1] * t + local[..., 1:2] * b + local[..., 2:3] * n


def to_local(w, frame):
    t, b, n = frame
    return np.stack([(w * t).sum(-1), (w * b).sum(-1), (w * n).sum(-1)], axis=-1)


def cosine_local(u1, u2):
    r = np.sqrt(u1)
    phi = TWO_PI * u2
    return np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(1.0 - u1)], axis=-1)


def sample_cosine_hemisphere(u1, u2, frame):
    """Cosine-weighted direction about the frame normal; returns (direction, pdf)."""
    local = cosine_local(np.asarray(u1, float), np.asarray(u2, float))
    return to_world(local, frame), local[..., 2] / np.pi


def stratified_2d(count, jitter_u1, jitter_u2):
    """Stratified (u1, u2) for ``count`` samples: a square grid when count is a square,
    otherwise 1D strata on u1 with free u2. Jitter arrays broadcast as (..., count)."""
    s = int(round(np.sqrt(count)))
    idx = np.arange(count)
    if s * s == count:
        return (idx // s + jitter_u1) / s, (idx % s + jitter_u2) / s
    return (idx + jitter_u1) / count, jitter_u2
