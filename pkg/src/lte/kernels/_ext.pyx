# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: BVH traversal, path continuation, FPS, kd-tree KNN, scatter-add.

Arithmetic mirrors lte.kernels.fallback operation for operation (no fast-math,
no FMA contraction) so both backends agree to rounding.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport cos, fabs, sin, sqrt, copysign, INFINITY
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

DEF STACK = 128
cdef double EPS_RAY = 1e-4
cdef double TWO_PI = 6.283185307179586
cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL

ctypedef fused real:
    float
    double


# ---------------------------------------------------------------- scatter-add

def scatter_add_rows(real[:, ::1] src, const int64_t[::1] index, Py_ssize_t n):
    cdef Py_ssize_t rows = src.shape[0], w = src.shape[1], i, j
    cdef int64_t r
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, w), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    for i in range(rows):
        r = index[i]
        for j in range(w):
            out[r, j] += src[i, j]
    return out_arr


# ------------------------------------------------------------------------ RNG

cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t key, uint64_t ctr) nogil:
    return <double>(mix64(key + ctr * GOLDEN) >> 11) * (1.0 / 9007199254740992.0)


# ----------------------------------------------------------------------- FPS

def fps(const double[:, ::1] pos, Py_ssize_t m, Py_ssize_t start):
    cdef Py_ssize_t n = pos.shape[0], i, s, best
    cdef double dx, dy, dz, d2, bestd
    out_arr = np.empty(m, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    mind_arr = np.full(n, INFINITY)
    cdef double[::1] mind = mind_arr
    cdef Py_ssize_t cur = start
    for s in range(m):
        out[s] = cur
        mind[cur] = -1.0  # selected points never compete again
        best = 0
        bestd = -1.0
        for i in range(n):
            dx = pos[i, 0] - pos[cur, 0]
            dy = pos[i, 1] - pos[cur, 1]
            dz = pos[i, 2] - pos[cur, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < mind[i]:
                mind[i] = d2
            if mind[i] > bestd:
                bestd = mind[i]
                best = i
        cur = best
    return out_arr


# -------------------------------------------------------------------- kd-tree

cdef inline bint worse(double d2a, int64_t ia, double d2b, int64_t ib) nogil:
    return d2a > d2b or (d2a == d2b and ia > ib)


cdef inline void heap_push(double* hd, int64_t* hi, Py_ssize_t* size, Py_ssize_t k,
                           double d2, int64_t idx) nogil:
    # max-heap on (d2, idx); holds at most k entries
    cdef Py_ssize_t c, p, l, r, w
    cdef double td
    cdef int64_t ti
    if size[0] < k:
        c = size[0]
        size[0] += 1
        hd[c] = d2
        hi[c] = idx
        while c > 0:
            p = (c - 1) // 2
            if worse(hd[c], hi[c], hd[p], hi[p]):
                td = hd[c]; hd[c] = hd[p]; hd[p] = td
                ti = hi[c]; hi[c] = hi[p]; hi[p] = ti
                c = p
            else:
                break
        return
    if not worse(hd[0], hi[0], d2, idx):
        return
    hd[0] = d2
    hi[0] = idx
    c = 0
    while True:
        l = 2 * c + 1
        r = l + 1
        w = c
        if l < k and worse(hd[l], hi[l], hd[w], hi[w]):
            w = l
        if r < k and worse(hd[r], hi[r], hd[w], hi[w]):
            w = r
        if w == c:
            break
        td = hd[c]; hd[c] = hd[w]; hd[w] = td
        ti = hi[c]; hi[c] = hi[w]; hi[w] = ti
        c = w


cdef inline void heap_fix(double* hd, int64_t* hi, Py_ssize_t size) nogil:
    cdef Py_ssize_t c = 0, l, r, w
    cdef double td
    cdef int64_t ti
    while True:
        l = 2 * c + 1
        r = l + 1
        w = c
        if l < size and worse(hd[l], hi[l], hd[w], hi[w]):
            w = l
        if r < size and worse(hd[r], hi[r], hd[w], hi[w]):
            w = r
        if w == c:
            break
        td = hd[c]; hd[c] = hd[w]; hd[w] = td
        ti = hi[c]; hi[c] = hi[w]; hi[w] = ti
        c = w



def kdtree_query(const double[:, ::1] pts, const int64_t[::1] order,
                 const double[:, ::1] lo, const double[:, ::1] hi,
                 const int64_t[::1] left, const int64_t[::1] right,
                 const int64_t[::1] start, const int64_t[::1] count,
                 const int64_t[::1] axis, const double[::1] split,
                 const double[:, ::1] queries, Py_ssize_t k):
    cdef Py_ssize_t nq = queries.shape[0], q, j, s, size, node, top
    cdef double qx, qy, qz, dx, dy, dz, d2, bd, v
    cdef int64_t idx
    idx_arr = np.empty((nq, k), dtype=np.int64)
    d2_arr = np.empty((nq, k), dtype=np.float64)
    cdef int64_t[:, ::1] out_i = idx_arr
    cdef double[:, ::1] out_d = d2_arr
    hd_arr = np.empty(k, dtype=np.float64)
    hi_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] hd = hd_arr
    cdef int64_t[::1] hix = hi_arr
    cdef int64_t stack[STACK]
    for q in range(nq):
        qx = queries[q, 0]; qy = queries[q, 1]; qz = queries[q, 2]
        size = 0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if size == k:
                bd = 0.0
                v = lo[node, 0] - qx
                if v > 0: bd = bd + v * v
                v = qx - hi[node, 0]
                if v > 0: bd = bd + v * v
                v = lo[node, 1] - qy
                if v > 0: bd = bd + v * v
                v = qy - hi[node, 1]
                if v > 0: bd = bd + v * v
                v = lo[node, 2] - qz
                if v > 0: bd = bd + v * v
                v = qz - hi[node, 2]
                if v > 0: bd = bd + v * v
                if bd > hd[0] * (1.0 + 1e-12):
                    continue
            if left[node] < 0:
                for s in range(start[node], start[node] + count[node]):
                    idx = order[s]
                    dx = qx - pts[idx, 0]
                    dy = qy - pts[idx, 1]
                    dz = qz - pts[idx, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    heap_push(&hd[0], &hix[0], &size, k, d2, idx)
            else:
                # near child popped first
                v = qx if axis[node] == 0 else (qy if axis[node] == 1 else qz)
                if v < split[node]:
                    stack[top] = right[node]
                    top += 1
                    stack[top] = left[node]
                else:
                    stack[top] = left[node]
                    top += 1
                    stack[top] = right[node]
                top += 1
        # heap -> ascending by (d2, idx)
        for j in range(k - 1, -1, -1):
            out_d[q, j] = hd[0]
            out_i[q, j] = hix[0]
            hd[0] = hd[j]
            hix[0] = hix[j]
            heap_fix(&hd[0], &hix[0], j)
    return idx_arr, d2_arr


# ---------------------------------------------------------------- ray casting

cdef struct SceneView:
    const double* v0
    const double* e1
    const double* e2
    const double* nrm
    const int* mat
    const int* kind
    const double* albedo
    const double* rough
    const double* emit
    const double* bmin
    const double* bmax
    const int* left
    const int* right
    const int* start
    const int* count
    const int* axis
    const int* prim


cdef inline bint tri_hit(SceneView* s, int tri, double ox, double oy, double oz,
                         double dx, double dy, double dz, double* t_out) nogil:
    cdef const double* e1 = s.e1 + 3 * tri
    cdef const double* e2 = s.e2 + 3 * tri
    cdef const double* v0 = s.v0 + 3 * tri
    cdef double px = dy * e2[2] - dz * e2[1]
    cdef double py = dz * e2[0] - dx * e2[2]
    cdef double pz = dx * e2[1] - dy * e2[0]
    cdef double det = e1[0] * px + e1[1] * py + e1[2] * pz
    if fabs(det) < 1e-14:
        return False
    cdef double inv = 1.0 / det
    cdef double tx = ox - v0[0]
    cdef double ty = oy - v0[1]
    cdef double tz = oz - v0[2]
    cdef double u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return False
    cdef double qx = ty * e1[2] - tz * e1[1]
    cdef double qy = tz * e1[0] - tx * e1[2]
    cdef double qz = tx * e1[1] - ty * e1[0]
    cdef double v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return False
    t_out[0] = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    return True


cdef inline bint box_hit(SceneView* s, int node, double ox, double oy, double oz,
                         double ix, double iy, double iz, double tmax) nogil:
    cdef const double* lo = s.bmin + 3 * node
    cdef const double* hi = s.bmax + 3 * node
    cdef double t0 = (lo[0] - ox) * ix
    cdef double t1 = (hi[0] - ox) * ix
    cdef double tn = t0 if t0 < t1 else t1
    cdef double tf = t1 if t0 < t1 else t0
    t0 = (lo[1] - oy) * iy
    t1 = (hi[1] - oy) * iy
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tn: tn = t0
    if t1 < tf: tf = t1
    t0 = (lo[2] - oz) * iz
    t1 = (hi[2] - oz) * iz
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tn: tn = t0
    if t1 < tf: tf = t1
    return tn <= tf and tf >= 0.0 and tn <= tmax


cdef inline int closest_hit(SceneView* s, double ox, double oy, double oz,
                            double dx, double dy, double dz, double tmax, double* t_best) nogil:
    cdef int stack[STACK]
    cdef int top = 0, node, j, tri, best = -1
    cdef double t
    cdef double ix = 1.0 / dx, iy = 1.0 / dy, iz = 1.0 / dz
    t_best[0] = tmax
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not box_hit(s, node, ox, oy, oz, ix, iy, iz, t_best[0]):
            continue
        if s.left[node] < 0:
            for j in range(s.start[node], s.start[node] + s.count[node]):
                tri = s.prim[j]
                if tri_hit(s, tri, ox, oy, oz, dx, dy, dz, &t):
                    if t > EPS_RAY and (t < t_best[0] or (t == t_best[0] and best >= 0 and tri < best)):
                        t_best[0] = t
                        best = tri
        else:
            # left child holds the lower centroids on the split axis: visit it first for positive rays
            if (dx if s.axis[node] == 0 else (dy if s.axis[node] == 1 else dz)) >= 0.0:
                stack[top] = s.right[node]
                top += 1
                stack[top] = s.left[node]
            else:
                stack[top] = s.left[node]
                top += 1
                stack[top] = s.right[node]
            top += 1
    return best


cdef SceneView make_view(dict sc):
    cdef SceneView s
    cdef const double[:, ::1] v0 = sc["v0"]
    cdef const double[:, ::1] e1 = sc["e1"]
    cdef const double[:, ::1] e2 = sc["e2"]
    cdef const double[:, ::1] nrm = sc["normal"]
    cdef const int[::1] mat = sc["mat"]
    cdef const int[::1] kind = sc["kind"]
    cdef const double[:, ::1] albedo = sc["albedo"]
    cdef const double[::1] rough = sc["roughness"]
    cdef const double[:, ::1] emit = sc["emission"]
    cdef const double[:, ::1] bmin = sc["bmin"]
    cdef const double[:, ::1] bmax = sc["bmax"]
    cdef const int[::1] left = sc["left"]
    cdef const int[::1] right = sc["right"]
    cdef const int[::1] start = sc["start"]
    cdef const int[::1] count = sc["count"]
    cdef const int[::1] prim = sc["prim"]
    cdef const int[::1] axis = sc["axis"]
    s.v0 = &v0[0, 0]; s.e1 = &e1[0, 0]; s.e2 = &e2[0, 0]; s.nrm = &nrm[0, 0]
    s.mat = &mat[0]; s.kind = &kind[0]; s.albedo = &albedo[0, 0]; s.rough = &rough[0]
    s.emit = &emit[0, 0]; s.bmin = &bmin[0, 0]; s.bmax = &bmax[0, 0]
    s.left = &left[0]; s.right = &right[0]; s.start = &start[0]; s.count = &count[0]
    s.prim = &prim[0]
    s.axis = &axis[0]
    return s


def intersect(dict sc, const double[:, ::1] origins, const double[:, ::1] dirs, const double[::1] tmax):
    cdef SceneView s = make_view(sc)
    cdef Py_ssize_t n = origins.shape[0], i
    t_arr = np.full(n, np.inf)
    tri_arr = np.full(n, -1, dtype=np.int64)
    cdef double[::1] tout = t_arr
    cdef int64_t[::1] triout = tri_arr
    cdef double tb
    cdef int hit
    with nogil:
        for i in range(n):
            hit = closest_hit(&s, origins[i, 0], origins[i, 1], origins[i, 2],
                              dirs[i, 0], dirs[i, 1], dirs[i, 2], tmax[i], &tb)
            if hit >= 0:
                tout[i] = tb
                triout[i] = hit
    return t_arr, tri_arr


# ------------------------------------------------------------ path tracing

cdef inline void frame_from(double nx, double ny, double nz, double* t, double* b) nogil:
    cdef double sgn = copysign(1.0, nz)
    cdef double a = -1.0 / (sgn + nz)
    cdef double c = nx * ny * a
    t[0] = 1.0 + sgn * nx * nx * a
    t[1] = sgn * c
    t[2] = -sgn * nx
    b[0] = c
    b[1] = sgn + ny * ny * a
    b[2] = -ny


def trace_paths(dict sc, const double[:, ::1] origins, const double[:, ::1] dirs,
                const uint64_t[::1] keys, int max_depth, uint64_t ctr_base):
    """Radiance arriving along each ray, gathering emission at up to ``max_depth`` vertices."""
    cdef SceneView s = make_view(sc)
    cdef Py_ssize_t n = origins.shape[0], i
    out_arr = np.zeros((n, 3))
    cdef double[:, ::1] out = out_arr
    cdef double ox, oy, oz, dx, dy, dz, tb, nx, ny, nz, cos_o, u1, u2
    cdef double b0, b1, b2, lx, ly, lz, r, phi, alpha, a2, tan2, ch, sh
    cdef double hx, hy, hz, woh, wx, wy, wz, cos_i, f0, fw, lam_o, lam_i, g2
    cdef double L0, L1, L2, k0, k1, k2
    cdef double tf[3]
    cdef double bf[3]
    cdef int depth, tri, m, kind
    cdef uint64_t key, ctr
    with nogil:
        for i in range(n):
            ox = origins[i, 0]; oy = origins[i, 1]; oz = origins[i, 2]
            dx = dirs[i, 0]; dy = dirs[i, 1]; dz = dirs[i, 2]
            key = keys[i]
            b0 = 1.0; b1 = 1.0; b2 = 1.0
            L0 = 0.0; L1 = 0.0; L2 = 0.0
            for depth in range(max_depth):
                tri = closest_hit(&s, ox, oy, oz, dx, dy, dz, INFINITY, &tb)
                if tri < 0:
                    break
                m = s.mat[tri]
                kind = s.kind[m]
                nx = s.nrm[3 * tri]; ny = s.nrm[3 * tri + 1]; nz = s.nrm[3 * tri + 2]
                cos_o = -(nx * dx + ny * dy + nz * dz)
                if cos_o > 0.0:
                    L0 = L0 + b0 * s.emit[3 * m]
                    L1 = L1 + b1 * s.emit[3 * m + 1]
                    L2 = L2 + b2 * s.emit[3 * m + 2]
                if depth + 1 == max_depth:
                    break
                if cos_o < 0.0:
                    nx = -nx; ny = -ny; nz = -nz
                    cos_o = -cos_o
                ox = ox + tb * dx
                oy = oy + tb * dy
                oz = oz + tb * dz
                ctr = ctr_base + <uint64_t>(3 * depth)
                u1 = uniform(key, ctr)
                u2 = uniform(key, ctr + 1)
                frame_from(nx, ny, nz, tf, bf)
                if kind == 1:
                    alpha = s.rough[m] * s.rough[m]
                    a2 = alpha * alpha
                    tan2 = a2 * u1 / (1.0 - u1)
                    ch = 1.0 / sqrt(1.0 + tan2)
                    sh = sqrt(1.0 - ch * ch)
                    phi = TWO_PI * u2
                    lx = sh * cos(phi); ly = sh * sin(phi); lz = ch
                    hx = lx * tf[0] + ly * bf[0] + lz * nx
                    hy = lx * tf[1] + ly * bf[1] + lz * ny
                    hz = lx * tf[2] + ly * bf[2] + lz * nz
                    woh = -(dx * hx + dy * hy + dz * hz)
                    if woh <= 0.0:
                        break
                    wx = dx + 2.0 * woh * hx
                    wy = dy + 2.0 * woh * hy
                    wz = dz + 2.0 * woh * hz
                    cos_i = wx * nx + wy * ny + wz * nz
                    if cos_i <= 0.0:
                        break
                    lam_o = 0.5 * (-1.0 + sqrt(1.0 + a2 * (1.0 - cos_o * cos_o) / (cos_o * cos_o)))
                    lam_i = 0.5 * (-1.0 + sqrt(1.0 + a2 * (1.0 - cos_i * cos_i) / (cos_i * cos_i)))
                    g2 = 1.0 / (1.0 + lam_o + lam_i)
                    fw = (1.0 - woh) * (1.0 - woh) * (1.0 - woh) * (1.0 - woh) * (1.0 - woh)
                    r = g2 * woh / (cos_o * ch)
                    f0 = s.albedo[3 * m]
                    b0 = b0 * (f0 + (1.0 - f0) * fw) * r
                    f0 = s.albedo[3 * m + 1]
                    b1 = b1 * (f0 + (1.0 - f0) * fw) * r
                    f0 = s.albedo[3 * m + 2]
                    b2 = b2 * (f0 + (1.0 - f0) * fw) * r
                else:
                    k0 = s.albedo[3 * m]; k1 = s.albedo[3 * m + 1]; k2 = s.albedo[3 * m + 2]
                    if k0 == 0.0 and k1 == 0.0 and k2 == 0.0:
                        break
                    r = sqrt(u1)
                    phi = TWO_PI * u2
                    lx = r * cos(phi); ly = r * sin(phi); lz = sqrt(1.0 - u1)
                    wx = lx * tf[0] + ly * bf[0] + lz * nx
                    wy = lx * tf[1] + ly * bf[1] + lz * ny
                    wz = lx * tf[2] + ly * bf[2] + lz * nz
                    b0 = b0 * k0
                    b1 = b1 * k1
                    b2 = b2 * k2
                dx = wx; dy = wy; dz = wz
            out[i, 0] = L0
            out[i, 1] = L1
            out[i, 2] = L2
    return out_arr
