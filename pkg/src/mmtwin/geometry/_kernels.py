"""Compiled ray/triangle and point/triangle kernels.

All kernels take the flattened scene arrays produced by ``Scene._packed()``:
per-triangle ``v0, e1, e2`` and a BVH forest (``node_lo, node_hi, node_left,
node_right, node_start, node_count, prims, roots``). A node is a leaf when
``node_left < 0``; its triangles are ``prims[start:start + count]``.
"""
import numpy as np
from numba import njit, prange

STACK_SIZE = 128
BLOCK = 256  # rays per parallel work item
BARY_EPS = 1e-12

_jit = dict(cache=True, error_model="numpy", fastmath=False)


@njit(inline="always", **_jit)
def ray_triangle(o, d, v0, e1, e2, i):
    """Moller-Trumbore against triangle ``i``, two-sided. Returns t or inf.

    Takes whole arrays plus an index so no row views are created in hot loops.
    """
    px = d[1] * e2[i, 2] - d[2] * e2[i, 1]
    py = d[2] * e2[i, 0] - d[0] * e2[i, 2]
    pz = d[0] * e2[i, 1] - d[1] * e2[i, 0]
    det = e1[i, 0] * px + e1[i, 1] * py + e1[i, 2] * pz
    inv = 1.0 / det
    tx = o[0] - v0[i, 0]
    ty = o[1] - v0[i, 1]
    tz = o[2] - v0[i, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    qx = ty * e1[i, 2] - tz * e1[i, 1]
    qy = tz * e1[i, 0] - tx * e1[i, 2]
    qz = tx * e1[i, 1] - ty * e1[i, 0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    t = (e2[i, 0] * qx + e2[i, 1] * qy + e2[i, 2] * qz) * inv
    # branch-free acceptance; NaNs from det == 0 fail every comparison
    ok = ((det != 0.0) & (u >= -BARY_EPS) & (u <= 1.0 + BARY_EPS)
          & (v >= -BARY_EPS) & (u + v <= 1.0 + BARY_EPS))
    return t if ok else np.inf


@njit(inline="always", **_jit)
def _axis(o, inv, lo, hi, t0, t1):
    ta = (lo - o) * inv
    tb = (hi - o) * inv
    if ta != ta:  # 0 * inf on a slab boundary
        ta = -np.inf
    if tb != tb:
        tb = np.inf
    if ta > tb:
        ta, tb = tb, ta
    return max(t0, ta), min(t1, tb)


@njit(inline="always", **_jit)
def _slab(o, ix, iy, iz, lo, hi, nd, tmin, tmax):
    t0, t1 = _axis(o[0], ix, lo[nd, 0], hi[nd, 0], tmin, tmax)
    if t0 > t1:
        return False
    t0, t1 = _axis(o[1], iy, lo[nd, 1], hi[nd, 1], t0, t1)
    if t0 > t1:
        return False
    t0, t1 = _axis(o[2], iz, lo[nd, 2], hi[nd, 2], t0, t1)
    return t0 <= t1


@njit(inline="always", **_jit)
def closest_hit(o, d, tmin, tmax, v0, e1, e2, node_lo, node_hi, node_left,
                node_right, node_start, node_count, prims, roots, stack):
    """Nearest triangle with tmin < t < tmax. Returns (t, tri) or (inf, -1)."""
    ix = 1.0 / d[0]
    iy = 1.0 / d[1]
    iz = 1.0 / d[2]
    best_t = tmax
    best = -1
    for r in range(roots.shape[0]):
        sp = 0
        stack[sp] = roots[r]
        sp += 1
        while sp > 0:
            sp -= 1
            nd = stack[sp]
            if not _slab(o, ix, iy, iz, node_lo, node_hi, nd, tmin, best_t):
                continue
            if node_left[nd] < 0:
                s = node_start[nd]
                for k in range(s, s + node_count[nd]):
                    tri = prims[k]
                    t = ray_triangle(o, d, v0, e1, e2, tri)
                    if t > tmin and t < best_t:
                        best_t = t
                        best = tri
                    elif t == best_t and best >= 0 and tri < best:
                        best = tri
            else:
                stack[sp] = node_left[nd]
                stack[sp + 1] = node_right[nd]
                sp += 2
    if best < 0:
        return np.inf, -1
    return best_t, best


@njit(**_jit)
def closest_hit_brute(o, d, tmin, tmax, v0, e1, e2):
    best_t = tmax
    best = -1
    for tri in range(v0.shape[0]):
        t = ray_triangle(o, d, v0, e1, e2, tri)
        if t > tmin and t < best_t:
            best_t = t
            best = tri
        elif t == best_t and best >= 0 and tri < best:
            best = tri
    if best < 0:
        return np.inf, -1
    return best_t, best


@njit(parallel=True, **_jit)
def intersect_many(origins, dirs, tmin, tmax, v0, e1, e2, node_lo, node_hi,
                   node_left, node_right, node_start, node_count, prims, roots):
    n = origins.shape[0]
    t_out = np.full(n, np.inf)
    tri_out = np.full(n, -1, np.int64)
    for b in prange((n + BLOCK - 1) // BLOCK):
        stack = np.empty(STACK_SIZE, np.int64)
        o = np.empty(3)
        d = np.empty(3)
        for i in range(b * BLOCK, min(n, (b + 1) * BLOCK)):
            for a in range(3):
                o[a] = origins[i, a]
                d[a] = dirs[i, a]
            t, tri = closest_hit(o, d, tmin[i], tmax[i], v0, e1, e2,
                                 node_lo, node_hi, node_left, node_right,
                                 node_start, node_count, prims, roots, stack)
            t_out[i] = t
            tri_out[i] = tri
    return t_out, tri_out


@njit(parallel=True, **_jit)
def intersect_many_brute(origins, dirs, tmin, tmax, v0, e1, e2):
    n = origins.shape[0]
    t_out = np.full(n, np.inf)
    tri_out = np.full(n, -1, np.int64)
    for b in prange((n + BLOCK - 1) // BLOCK):
        o = np.empty(3)
        d = np.empty(3)
        for i in range(b * BLOCK, min(n, (b + 1) * BLOCK)):
            for a in range(3):
                o[a] = origins[i, a]
                d[a] = dirs[i, a]
            t, tri = closest_hit_brute(o, d, tmin[i], tmax[i], v0, e1, e2)
            t_out[i] = t
            tri_out[i] = tri
    return t_out, tri_out


@njit(**_jit)
def closest_point_triangle(p, a, b, c):
    """Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


@njit(**_jit)
def _box_dist2(p, lo, hi):
    s = 0.0
    for a in range(3):
        if p[a] < lo[a]:
            s += (lo[a] - p[a]) ** 2
        elif p[a] > hi[a]:
            s += (p[a] - hi[a]) ** 2
    return s


@njit(parallel=True, **_jit)
def nearest_many(points, v0, e1, e2, node_lo, node_hi, node_left, node_right,
                 node_start, node_count, prims, roots):
    """Distance, closest point and triangle id of the mesh point nearest each query."""
    n = points.shape[0]
    dist = np.full(n, np.inf)
    tri_out = np.full(n, -1, np.int64)
    closest = np.zeros((n, 3))
    for i in prange(n):
        stack = np.empty(STACK_SIZE, np.int64)
        p = points[i]
        best2 = np.inf
        for r in range(roots.shape[0]):
            sp = 0
            stack[sp] = roots[r]
            sp += 1
            while sp > 0:
                sp -= 1
                nd = stack[sp]
                if _box_dist2(p, node_lo[nd], node_hi[nd]) > best2:
                    continue
                if node_left[nd] < 0:
                    s = node_start[nd]
                    for k in range(s, s + node_count[nd]):
                        tri = prims[k]
                        a = v0[tri]
                        q = closest_point_triangle(p, a, a + e1[tri], a + e2[tri])
                        dd = (q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2 + (q[2] - p[2]) ** 2
                        if dd < best2 or (dd == best2 and tri < tri_out[i]):
                            best2 = dd
                            tri_out[i] = tri
                            closest[i] = q
                else:
                    # visit the nearer child first
                    l = node_left[nd]
                    rr = node_right[nd]
                    dl = _box_dist2(p, node_lo[l], node_hi[l])
                    dr = _box_dist2(p, node_lo[rr], node_hi[rr])
                    if dl < dr:
                        stack[sp] = rr
                        stack[sp + 1] = l
                    else:
                        stack[sp] = l
                        stack[sp + 1] = rr
                    sp += 2
        dist[i] = np.sqrt(best2)
    return dist, closest, tri_out
