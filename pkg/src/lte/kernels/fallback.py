"""Pure-numpy implementations of the compiled kernels.

Same contracts and arithmetic order as the extension; ray casting here is a
brute-force scan over all triangles instead of BVH traversal.
"""
import numpy as np

EPS_RAY = 1e-4
TWO_PI = 6.283185307179586
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform(keys, ctr):
    ctr = np.asarray(ctr, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = mix64(np.asarray(keys, dtype=np.uint64) + ctr * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def scatter_add_rows(src, index, n):
    out = np.zeros((n,) + src.shape[1:], dtype=src.dtype)
    np.add.at(out, index, src)
    return out


def fps(pos, m, start):
    n = len(pos)
    mind = np.full(n, np.inf)
    out = np.empty(m, dtype=np.int64)
    cur = start
    for s in range(m):
        out[s] = cur
        mind[cur] = -1.0
        d = pos - pos[cur]
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        np.minimum(mind, d2, out=mind)
        cur = int(np.argmax(mind))
    return out


def knn_bruteforce(points, queries, k, chunk=None):
    """Exact k nearest by squared distance, ties to the lower index."""
    n = len(points)
    chunk = chunk or max(1, 4_000_000 // max(n, 1))
    idx_out = np.empty((len(queries), k), dtype=np.int64)
    d2_out = np.empty((len(queries), k), dtype=np.float64)
    for s in range(0, len(queries), chunk):
        q = queries[s:s + chunk]
        dx = q[:, None, 0] - points[None, :, 0]
        dy = q[:, None, 1] - points[None, :, 1]
        dz = q[:, None, 2] - points[None, :, 2]
        d2 = dx * dx + dy * dy + dz * dz
        if k < n:
            part = np.argpartition(d2, k - 1, axis=1)[:, k - 1]
            kth = d2[np.arange(len(q)), part]
            cand = d2 <= kth[:, None]
        else:
            cand = np.ones_like(d2, dtype=bool)
        for r in range(len(q)):
            ci = np.flatnonzero(cand[r])
            o = np.lexsort((ci, d2[r, ci]))[:k]
            idx_out[s + r] = ci[o]
            d2_out[s + r] = d2[r, ci[o]]
    return idx_out, d2_out


def kdtree_query(pts, order, lo, hi, left, right, start, count, axis, split, queries, k):
    return knn_bruteforce(pts, queries, k)


def intersect(sc, origins, dirs, tmax, chunk=None):
    """Nearest hit with EPS_RAY < t < tmax; ties go to the lowest triangle index."""
    v0, e1, e2 = sc["v0"], sc["e1"], sc["e2"]
    n, ntri = len(origins), len(v0)
    chunk = chunk or max(1, 2_000_000 // max(ntri, 1))
    t_out = np.full(n, np.inf)
    tri_out = np.full(n, -1, dtype=np.int64)
    for s in range(0, n, chunk):
        o = origins[s:s + chunk, None, :]
        d = dirs[s:s + chunk, None, :]
        tm = tmax[s:s + chunk, None]
        dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
        px = dy * e2[None, :, 2] - dz * e2[None, :, 1]
        py = dz * e2[None, :, 0] - dx * e2[None, :, 2]
        pz = dx * e2[None, :, 1] - dy * e2[None, :, 0]
        det = e1[None, :, 0] * px + e1[None, :, 1] * py + e1[None, :, 2] * pz
        ok = np.abs(det) >= 1e-14
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tx = o[..., 0] - v0[None, :, 0]
            ty = o[..., 1] - v0[None, :, 1]
            tz = o[..., 2] - v0[None, :, 2]
            u = (tx * px + ty * py + tz * pz) * inv
            ok &= (u >= 0.0) & (u <= 1.0)
            qx = ty * e1[None, :, 2] - tz * e1[None, :, 1]
            qy = tz * e1[None, :, 0] - tx * e1[None, :, 2]
            qz = tx * e1[None, :, 1] - ty * e1[None, :, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv
            ok &= (v >= 0.0) & (u + v <= 1.0)
            t = (e2[None, :, 0] * qx + e2[None, :, 1] * qy + e2[None, :, 2] * qz) * inv
        ok &= (t > EPS_RAY) & (t < tm)
        t = np.where(ok, t, np.inf)
        best = np.argmin(t, axis=1)
        bt = t[np.arange(len(t)), best]
        hit = np.isfinite(bt)
        t_out[s:s + chunk][hit] = bt[hit]
        tri_out[s:s + chunk][hit] = best[hit]
    return t_out, tri_out


def frame_from(n):
    nx, ny, nz = n[:, 0], n[:, 1], n[:, 2]
    sgn = np.copysign(1.0, nz)
    a = -1.0 / (sgn + nz)
    c = nx * ny * a
    t = np.stack([1.0 + sgn * nx * nx * a, sgn * c, -sgn * nx], axis=1)
    b = np.stack([c, sgn + ny * ny * a, -ny], axis=1)
    return t, b


def _to_world(lx, ly, lz, t, b, n):
    return np.stack([
        lx * t[:, 0] + ly * b[:, 0] + lz * n[:, 0],
        lx * t[:, 1] + ly * b[:, 1] + lz * n[:, 1],
        lx * t[:, 2] + ly * b[:, 2] + lz * n[:, 2],
    ], axis=1)


def trace_paths(sc, origins, dirs, keys, max_depth, ctr_base):
    n = len(origins)
    out = np.zeros((n, 3))
    beta = np.ones((n, 3))
    o = origins.copy()
    d = dirs.copy()
    alive = np.arange(n)
    for depth in range(max_depth):
        if len(alive) == 0:
            break
        t, tri = intersect(sc, o[alive], d[alive], np.full(len(alive), np.inf))
        hit = tri >= 0
        alive, t, tri = alive[hit], t[hit], tri[hit]
        m = sc["mat"][tri]
        kind = sc["kind"][m]
        nrm = sc["normal"][tri].copy()
        dd = d[alive]
        cos_o = -(nrm[:, 0] * dd[:, 0] + nrm[:, 1] * dd[:, 1] + nrm[:, 2] * dd[:, 2])
        front = cos_o > 0.0
        out[alive[front]] += beta[alive[front]] * sc["emission"][m[front]]
        if depth + 1 == max_depth:
            break
        back = cos_o < 0.0
        nrm[back] = -nrm[back]
        cos_o = np.where(back, -cos_o, cos_o)
        o[alive] = o[alive] + t[:, None] * dd
        ctr = np.uint64(ctr_base + 3 * depth)
        u1 = uniform(keys[alive], ctr)
        u2 = uniform(keys[alive], ctr + np.uint64(1))
        tf, bf = frame_from(nrm)
        keep = np.ones(len(alive), dtype=bool)
        wi = np.zeros((len(alive), 3))

        g = kind == 1
        if g.any():
            rough = sc["roughness"][m[g]]
            alpha = rough * rough
            a2 = alpha * alpha
            tan2 = a2 * u1[g] / (1.0 - u1[g])
            ch = 1.0 / np.sqrt(1.0 + tan2)
            sh = np.sqrt(1.0 - ch * ch)
            phi = TWO_PI * u2[g]
            h = _to_world(sh * np.cos(phi), sh * np.sin(phi), ch, tf[g], bf[g], nrm[g])
            dg = dd[g]
            woh = -(dg[:, 0] * h[:, 0] + dg[:, 1] * h[:, 1] + dg[:, 2] * h[:, 2])
            w = dg + (2.0 * woh)[:, None] * h
            ng = nrm[g]
            cos_i = w[:, 0] * ng[:, 0] + w[:, 1] * ng[:, 1] + w[:, 2] * ng[:, 2]
            valid = (woh > 0.0) & (cos_i > 0.0)
            co = cos_o[g]
            with np.errstate(divide="ignore", invalid="ignore"):
                lam_o = 0.5 * (-1.0 + np.sqrt(1.0 + a2 * (1.0 - co * co) / (co * co)))
                lam_i = 0.5 * (-1.0 + np.sqrt(1.0 + a2 * (1.0 - cos_i * cos_i) / (cos_i * cos_i)))
            g2 = 1.0 / (1.0 + lam_o + lam_i)
            one_m = 1.0 - woh
            fw = one_m * one_m * one_m * one_m * one_m
            r = g2 * woh / (co * ch)
            f0 = sc["albedo"][m[g]]
            upd = (f0 + (1.0 - f0) * fw[:, None]) * r[:, None]
            gi = np.flatnonzero(g)
            keep[gi[~valid]] = False
            ok = gi[valid]
            beta[alive[ok]] = beta[alive[ok]] * upd[valid]
            wi[ok] = w[valid]

        lmb = ~g
        if lmb.any():
            alb = sc["albedo"][m[lmb]]
            black = (alb[:, 0] == 0.0) & (alb[:, 1] == 0.0) & (alb[:, 2] == 0.0)
            r = np.sqrt(u1[lmb])
            phi = TWO_PI * u2[lmb]
            w = _to_world(r * np.cos(phi), r * np.sin(phi), np.sqrt(1.0 - u1[lmb]), tf[lmb], bf[lmb], nrm[lmb])
            li = np.flatnonzero(lmb)
            keep[li[black]] = False
            ok = li[~black]
            beta[alive[ok]] = beta[alive[ok]] * alb[~black]
            wi[ok] = w[~black]

        alive = alive[keep]
        d[alive] = wi[keep]
    return out
