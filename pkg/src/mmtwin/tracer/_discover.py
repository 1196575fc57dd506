"""Compiled shoot-and-bounce discovery kernel."""
import numpy as np
from numba import njit, prange

from ..geometry._kernels import BLOCK, STACK_SIZE, closest_hit


@njit(parallel=True, cache=True, error_model="numpy")
def discover(tx, rx, dirs, max_depth, cap_min, cap_frac, t_eps, t_far,
             normals, record, v0, e1, e2, node_lo, node_hi, node_left, node_right,
             node_start, node_count, prims, roots):
    n = dirs.shape[0]
    D = max_depth
    captured = np.zeros((n, D + 1), np.bool_)
    tris = np.full((n, D), -1, np.int64)
    first_tri = np.full(n, -1, np.int64)
    first_pt = np.zeros((n, 3))
    m = n if record else 0
    seg_a = np.zeros((m, D + 1, 3))
    seg_b = np.zeros((m, D + 1, 3))
    seg_ok = np.zeros((m, D + 1), np.bool_)
    for b in prange((n + BLOCK - 1) // BLOCK):
        stack = np.empty(STACK_SIZE, np.int64)
        o = np.empty(3)
        d = np.empty(3)
        for i in range(b * BLOCK, min(n, (b + 1) * BLOCK)):
            _walk(i, tx, rx, dirs, D, cap_min, cap_frac, t_eps, t_far, normals, record,
                  v0, e1, e2, node_lo, node_hi, node_left, node_right, node_start,
                  node_count, prims, roots, stack, o, d, captured, tris, first_tri,
                  first_pt, seg_a, seg_b, seg_ok)
    return captured, tris, first_tri, first_pt, seg_a, seg_b, seg_ok


@njit(cache=True, error_model="numpy")
def _walk(i, tx, rx, dirs, D, cap_min, cap_frac, t_eps, t_far, normals, record,
          v0, e1, e2, node_lo, node_hi, node_left, node_right, node_start, node_count,
          prims, roots, stack, o, d, captured, tris, first_tri, first_pt, seg_a, seg_b,
          seg_ok):
    for a in range(3):
        o[a] = tx[a]
        d[a] = dirs[i, a]
    acc = 0.0
    for k in range(D + 1):
        tmin = 0.0 if k == 0 else t_eps
        t, tri = closest_hit(o, d, tmin, t_far, v0, e1, e2, node_lo, node_hi,
                             node_left, node_right, node_start, node_count,
                             prims, roots, stack)
        t_end = t if tri >= 0 else t_far
        if k >= 1:
            wx = rx[0] - o[0]
            wy = rx[1] - o[1]
            wz = rx[2] - o[2]
            tc = wx * d[0] + wy * d[1] + wz * d[2]
            if tc > 0.0 and tc < t_end:
                dist2 = wx * wx + wy * wy + wz * wz - tc * tc
                r = max(cap_min, cap_frac * (acc + tc))
                if dist2 <= r * r:
                    captured[i, k] = True
        if record:
            for a in range(3):
                seg_a[i, k, a] = o[a]
                seg_b[i, k, a] = o[a] + t_end * d[a]
            seg_ok[i, k] = True
        if tri < 0 or k == D:
            return
        tris[i, k] = tri
        nx = normals[tri, 0]
        ny = normals[tri, 1]
        nz = normals[tri, 2]
        dn = d[0] * nx + d[1] * ny + d[2] * nz
        for a in range(3):
            o[a] = o[a] + t * d[a]
        if k == 0:
            first_tri[i] = tri
            for a in range(3):
                first_pt[i, a] = o[a]
        if dn == 0.0:
            return
        d[0] -= 2.0 * dn * nx
        d[1] -= 2.0 * dn * ny
        d[2] -= 2.0 * dn * nz
        inv = 1.0 / np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        for a in range(3):
            d[a] *= inv
        acc += t
