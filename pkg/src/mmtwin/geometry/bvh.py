"""Bounding-volume hierarchy over triangles.

Median split on the longest centroid axis; flattened into arrays so the
compiled traversal kernels can walk it. Several independently built trees can
be concatenated into a forest (see :func:`merge_forest`), which is how proxy
objects get their own local index without touching the base tree.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class BVH:
    node_lo: np.ndarray
    node_hi: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    prims: np.ndarray
    roots: np.ndarray

    @property
    def n_nodes(self):
        return self.node_lo.shape[0]


@njit(cache=True)
def _build(lo, hi, leaf_size):
    n = lo.shape[0]
    cap = max(1, 2 * n)
    node_lo = np.empty((cap, 3))
    node_hi = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    prims = np.arange(n)
    cent = 0.5 * (lo + hi)

    stack_node = np.empty(cap, np.int64)
    stack_s = np.empty(cap, np.int64)
    stack_e = np.empty(cap, np.int64)
    n_nodes = 1
    sp = 0
    stack_node[0] = 0
    stack_s[0] = 0
    stack_e[0] = n
    sp = 1
    while sp > 0:
        sp -= 1
        nd = stack_node[sp]
        s = stack_s[sp]
        e = stack_e[sp]
        blo = np.full(3, np.inf)
        bhi = np.full(3, -np.inf)
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for k in range(s, e):
            p = prims[k]
            for a in range(3):
                blo[a] = min(blo[a], lo[p, a])
                bhi[a] = max(bhi[a], hi[p, a])
                clo[a] = min(clo[a], cent[p, a])
                chi[a] = max(chi[a], cent[p, a])
        node_lo[nd] = blo
        node_hi[nd] = bhi
        if e - s <= leaf_size:
            start[nd] = s
            count[nd] = e - s
            continue
        axis = 0
        ext = chi - clo
        if ext[1] > ext[axis]:
            axis = 1
        if ext[2] > ext[axis]:
            axis = 2
        seg = prims[s:e].copy()
        keys = cent[seg, axis]
        order = np.argsort(keys, kind="mergesort")
        prims[s:e] = seg[order]
        mid = s + (e - s) // 2
        l = n_nodes
        r = n_nodes + 1
        n_nodes += 2
        left[nd] = l
        right[nd] = r
        stack_node[sp] = l
        stack_s[sp] = s
        stack_e[sp] = mid
        sp += 1
        stack_node[sp] = r
        stack_s[sp] = mid
        stack_e[sp] = e
        sp += 1
    return (node_lo[:n_nodes], node_hi[:n_nodes], left[:n_nodes], right[:n_nodes],
            start[:n_nodes], count[:n_nodes], prims)


def build_bvh(vertices, triangles, leaf_size=4):
    """Build a single-root BVH for ``triangles`` (indices into ``vertices``)."""
    triangles = np.asarray(triangles, dtype=np.int64)
    if len(triangles) == 0:
        return empty_bvh()
    corners = vertices[triangles]
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    lo_n, hi_n, left, right, start, count, prims = _build(lo, hi, leaf_size)
    return BVH(lo_n, hi_n, left, right, start, count, prims, np.array([0], np.int64))


def empty_bvh():
    z3 = np.zeros((0, 3))
    zi = np.zeros(0, np.int64)
    return BVH(z3, z3.copy(), zi, zi.copy(), zi.copy(), zi.copy(), zi.copy(), zi.copy())


def merge_forest(trees, tri_offsets):
    """Concatenate BVHs whose primitives live at ``tri_offsets`` in a shared triangle array."""
    parts = [(t, o) for t, o in zip(trees, tri_offsets) if t.n_nodes > 0]
    if not parts:
        return empty_bvh()
    node_lo, node_hi, left, right, start, count, prims, roots = ([] for _ in range(8))
    node_base = 0
    prim_base = 0
    for tree, tri_off in parts:
        node_lo.append(tree.node_lo)
        node_hi.append(tree.node_hi)
        is_inner = tree.node_left >= 0
        left.append(np.where(is_inner, tree.node_left + node_base, -1))
        right.append(np.where(is_inner, tree.node_right + node_base, -1))
        start.append(tree.node_start + prim_base)
        count.append(tree.node_count)
        prims.append(tree.prims + tri_off)
        roots.append(tree.roots + node_base)
        node_base += tree.n_nodes
        prim_base += len(tree.prims)
    cat = np.concatenate
    return BVH(cat(node_lo), cat(node_hi), cat(left), cat(right), cat(start),
               cat(count), cat(prims), cat(roots))
