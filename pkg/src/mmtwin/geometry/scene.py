"""Triangle-soup scenes, ray queries and mesh primitives."""
from dataclasses import dataclass, field
import itertools

import numpy as np

from . import _kernels as K
from .bvh import BVH, build_bvh, merge_forest

NORMAL_TOL = 1e-9
_PLANE_ROUND = 6
_scene_uid = itertools.count()


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        if o.shape != (3,) or d.shape != (3,):
            raise ValueError("origin and direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not (0.0 <= self.t_min < self.t_max):
            raise ValueError("need 0 <= t_min < t_max")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    normal: np.ndarray
    triangle: int
    region: int


@dataclass(frozen=True)
class ProxyMesh:
    """Triangles of one inserted proxy object, with their own local BVH."""
    proxy_id: str
    corners: np.ndarray  # (n, 3, 3)
    region: int
    bvh: BVH


@dataclass
class _Packed:
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    bvh: BVH

    def args(self):
        b = self.bvh
        return (self.v0, self.e1, self.e2, b.node_lo, b.node_hi, b.node_left,
                b.node_right, b.node_start, b.node_count, b.prims, b.roots)


def _triangle_frames(corners):
    v0 = np.ascontiguousarray(corners[:, 0])
    e1 = np.ascontiguousarray(corners[:, 1] - corners[:, 0])
    e2 = np.ascontiguousarray(corners[:, 2] - corners[:, 0])
    cr = np.cross(e1, e2)
    area2 = np.linalg.norm(cr, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = cr / area2[:, None]
    return v0, e1, e2, normals, 0.5 * area2


def _plane_key(normal, point):
    n = normal.copy()
    if n[np.argmax(np.abs(n))] < 0:
        n = -n
    d = float(n @ point)
    n = np.round(n, _PLANE_ROUND) + 0.0
    return (n[0], n[1], n[2], round(d, _PLANE_ROUND) + 0.0)


class Scene:
    """Immutable triangle soup with per-triangle surface regions.

    The base mesh is indexed once; proxies (moving bodies) are appended as
    separate local BVHs so insertion never rebuilds the base tree. Mutating
    operations return a new ``Scene`` with ``epoch + 1``.
    """

    def __init__(self, vertices, triangles, regions, region_labels=None, *,
                 _base=None, _proxies=(), epoch=0):
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        regions = np.asarray(regions, dtype=np.int64).reshape(-1)
        if len(regions) != len(triangles):
            raise ValueError("one region id per triangle required")
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle index out of range")
        if len(regions):
            uniq = np.unique(regions)
            if not np.array_equal(uniq, np.arange(len(uniq))):
                raise ValueError("surface-region ids must be contiguous 0..K-1")
        self.vertices = vertices
        self.triangles = triangles
        self.base_regions = regions
        self.n_base_regions = int(regions.max()) + 1 if len(regions) else 0
        if region_labels is None:
            region_labels = [f"region_{i}" for i in range(self.n_base_regions)]
        self.region_labels = list(region_labels)
        self.proxies = tuple(_proxies)
        self.epoch = int(epoch)
        self.uid = next(_scene_uid)

        base_corners = vertices[triangles] if len(triangles) else np.zeros((0, 3, 3))
        if _base is None:
            _base = build_bvh(vertices, triangles)
        self._base_bvh = _base

        corners = [base_corners] + [p.corners for p in self.proxies]
        regs = [regions] + [np.full(len(p.corners), p.region, np.int64) for p in self.proxies]
        self.corners = np.concatenate(corners) if corners else np.zeros((0, 3, 3))
        self.regions = np.concatenate(regs)
        v0, e1, e2, normals, area = _triangle_frames(self.corners)
        if len(area) and np.any(area == 0):
            raise ValueError("degenerate triangle in scene")
        self.normals = normals
        self.areas = area
        offsets = np.cumsum([0, len(base_corners)] + [len(p.corners) for p in self.proxies])
        forest = merge_forest([_base] + [p.bvh for p in self.proxies], offsets[:-1])
        self._packed = _Packed(v0, e1, e2, forest)
        self.plane_ids = self._group_planes()
        first = np.unique(self.plane_ids, return_index=True)[1]
        self.plane_normal = self.normals[first]
        self.plane_offset = np.einsum("ij,ij->i", self.plane_normal, self.corners[first, 0])
        for arr in (self.corners, self.regions, self.normals, self.areas, self.plane_ids,
                    self.plane_normal, self.plane_offset):
            arr.setflags(write=False)

    # -- construction -----------------------------------------------------------
    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros(0, np.int64))

    def _group_planes(self):
        ids = np.empty(len(self.corners), np.int64)
        table = {}
        for i in range(len(self.corners)):
            key = _plane_key(self.normals[i], self.corners[i, 0])
            ids[i] = table.setdefault(key, len(table))
        return ids

    @property
    def n_triangles(self):
        return len(self.corners)

    @property
    def n_regions(self):
        return int(self.regions.max()) + 1 if len(self.regions) else 0

    @property
    def n_planes(self):
        return int(self.plane_ids.max()) + 1 if len(self.plane_ids) else 0

    def bounds(self):
        if self.n_triangles == 0:
            return np.zeros(3), np.zeros(3)
        pts = self.corners.reshape(-1, 3)
        return pts.min(axis=0), pts.max(axis=0)

    def with_proxy(self, proxy_id, corners, region=None):
        """Return a new epoch containing an extra proxy object."""
        if any(p.proxy_id == proxy_id for p in self.proxies):
            raise ValueError(f"proxy {proxy_id!r} already present")
        used = set(range(self.n_base_regions)) | {p.region for p in self.proxies}
        if region is None:
            region = max(used, default=-1) + 1
        elif region in used:
            raise ValueError(f"region id {region} already in use")
        corners = np.asarray(corners, dtype=float).reshape(-1, 3, 3)
        flat = corners.reshape(-1, 3)
        tris = np.arange(len(flat)).reshape(-1, 3)
        proxy = ProxyMesh(proxy_id, corners, int(region), build_bvh(flat, tris))
        return Scene(self.vertices, self.triangles, self.base_regions, self.region_labels,
                     _base=self._base_bvh, _proxies=self.proxies + (proxy,),
                     epoch=self.epoch + 1)

    def without_proxy(self, proxy_id):
        keep = tuple(p for p in self.proxies if p.proxy_id != proxy_id)
        if len(keep) == len(self.proxies):
            raise KeyError(proxy_id)
        return Scene(self.vertices, self.triangles, self.base_regions, self.region_labels,
                     _base=self._base_bvh, _proxies=keep, epoch=self.epoch + 1)

    def replace_proxy(self, proxy_id, corners):
        """Move a proxy: same id, region and position in the triangle order."""
        corners = np.asarray(corners, dtype=float).reshape(-1, 3, 3)
        out = []
        found = False
        for p in self.proxies:
            if p.proxy_id == proxy_id:
                flat = corners.reshape(-1, 3)
                bvh = build_bvh(flat, np.arange(len(flat)).reshape(-1, 3))
                p = ProxyMesh(proxy_id, corners, p.region, bvh)
                found = True
            out.append(p)
        if not found:
            raise KeyError(proxy_id)
        return Scene(self.vertices, self.triangles, self.base_regions, self.region_labels,
                     _base=self._base_bvh, _proxies=tuple(out), epoch=self.epoch + 1)

    def layout(self):
        """Identity of the triangle numbering: base mesh plus (proxy id, count) blocks."""
        return (id(self._base_bvh), len(self.triangles),
                tuple((p.proxy_id, len(p.corners)) for p in self.proxies))

    def proxy(self, proxy_id):
        for p in self.proxies:
            if p.proxy_id == proxy_id:
                return p
        raise KeyError(proxy_id)

    # -- queries ----------------------------------------------------------------
    def intersect_many(self, origins, dirs, t_min=0.0, t_max=np.inf, use_index=True):
        """Vectorised nearest-hit query. Returns ``(t, triangle)``; misses are ``(inf, -1)``."""
        origins = np.ascontiguousarray(np.broadcast_to(origins, np.shape(dirs)), dtype=float)
        dirs = np.ascontiguousarray(dirs, dtype=float)
        n = len(dirs)
        tmin = np.ascontiguousarray(np.broadcast_to(t_min, (n,)), dtype=float)
        tmax = np.ascontiguousarray(np.broadcast_to(t_max, (n,)), dtype=float)
        if self.n_triangles == 0 or n == 0:
            return np.full(n, np.inf), np.full(n, -1, np.int64)
        p = self._packed
        if use_index:
            return K.intersect_many(origins, dirs, tmin, tmax, *p.args())
        return K.intersect_many_brute(origins, dirs, tmin, tmax, p.v0, p.e1, p.e2)

    def occluded(self, a, b, eps=1e-6):
        """True where the open segment a->b (shrunk by ``eps`` at both ends) hits geometry."""
        a = np.atleast_2d(np.asarray(a, float))
        b = np.atleast_2d(np.asarray(b, float))
        a, b = np.broadcast_arrays(a, b)
        v = b - a
        dist = np.linalg.norm(v, axis=1)
        d = v / dist[:, None]
        t, tri = self.intersect_many(a, d, eps, np.maximum(dist - eps, eps))
        return tri >= 0

    def nearest(self, points):
        """Nearest mesh point to each query: ``(distance, closest_point, triangle)``."""
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        if self.n_triangles == 0:
            raise ValueError("empty mesh")
        return K.nearest_many(points, *self._packed.args())

    def oriented_normals(self, tri, dirs):
        """Triangle normals flipped to face against ``dirs``."""
        n = self.normals[tri]
        flip = np.einsum("ij,ij->i", n, dirs) > 0
        return np.where(flip[:, None], -n, n)


def intersect(scene, ray, use_index=True):
    """Nearest hit of ``ray`` in ``scene`` or ``None``."""
    t, tri = scene.intersect_many(ray.origin[None], ray.direction[None],
                                  ray.t_min, ray.t_max, use_index=use_index)
    if tri[0] < 0:
        return None
    point = ray.origin + t[0] * ray.direction
    normal = scene.oriented_normals(tri, ray.direction[None])[0]
    return Hit(float(t[0]), point, normal, int(tri[0]), int(scene.regions[tri[0]]))


def mirror_reflect(direction, normal):
    """Specular reflection d' = d - 2 (d.n) n."""
    d = np.asarray(direction, dtype=float)
    n = np.asarray(normal, dtype=float)
    dn = d @ n
    if abs(dn) < 1e-12:
        raise ValueError("grazing incidence: direction is tangent to the surface")
    if dn > 0:
        raise ValueError("direction must point into the surface (d.n < 0)")
    out = d - 2.0 * dn * n
    return out / np.linalg.norm(out)


# -- primitive meshes ---------------------------------------------------------

_BOX_FACES = {
    # face name -> (corner indices as two triangles) on the unit cube corners
    "x-": [(0, 4, 6), (0, 6, 2)],
    "x+": [(1, 3, 7), (1, 7, 5)],
    "y-": [(0, 1, 5), (0, 5, 4)],
    "y+": [(2, 6, 7), (2, 7, 3)],
    "z-": [(0, 2, 3), (0, 3, 1)],
    "z+": [(4, 5, 7), (4, 7, 6)],
}
BOX_FACE_ORDER = ("x-", "x+", "y-", "y+", "z-", "z+")


def box_mesh(lo, hi):
    """Axis-aligned box: (vertices, triangles, face names per triangle)."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    v = np.array([[hi[0] if i & 1 else lo[0], hi[1] if i & 2 else lo[1],
                   hi[2] if i & 4 else lo[2]] for i in range(8)])
    tris, names = [], []
    for face in BOX_FACE_ORDER:
        for t in _BOX_FACES[face]:
            tris.append(t)
            names.append(face)
    return v, np.array(tris, np.int64), names


def shoebox(size=(6.0, 4.0, 3.0), region_of_face=None):
    """Room with a corner at the origin. Default regions: floor 0, ceiling 1, walls 2."""
    if region_of_face is None:
        region_of_face = {"z-": 0, "z+": 1, "x-": 2, "x+": 2, "y-": 2, "y+": 2}
    v, t, names = box_mesh((0, 0, 0), size)
    regions = np.array([region_of_face[n] for n in names], np.int64)
    return v, t, regions


def plane_mesh(center, normal, half_size):
    """Square made of two triangles."""
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    a = np.cross(n, [1.0, 0, 0]) if abs(n[0]) < 0.9 else np.cross(n, [0, 1.0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(n, a)
    c = np.asarray(center, float)
    h = half_size
    v = np.array([c - h * a - h * b, c + h * a - h * b, c + h * a + h * b, c - h * a + h * b])
    return v, np.array([[0, 1, 2], [0, 2, 3]], np.int64)


def cylinder_mesh(radius, height, n_sides=16, base=(0.0, 0.0, 0.0), capped=True):
    """Vertical prism approximating a cylinder standing on ``base``."""
    if radius <= 0 or height <= 0 or n_sides < 3:
        raise ValueError("cylinder needs positive radius/height and >= 3 sides")
    ang = 2 * np.pi * np.arange(n_sides) / n_sides
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(n_sides)], axis=1)
    bottom = ring + np.asarray(base, float)
    top = bottom + [0, 0, height]
    verts = [bottom, top]
    tris = []
    for i in range(n_sides):
        j = (i + 1) % n_sides
        tris.append((i, j, n_sides + j))
        tris.append((i, n_sides + j, n_sides + i))
    if capped:
        cb = len(bottom) + len(top)
        verts.append(np.array([np.asarray(base, float), np.asarray(base, float) + [0, 0, height]]))
        for i in range(n_sides):
            j = (i + 1) % n_sides
            tris.append((cb, j, i))
            tris.append((cb + 1, n_sides + i, n_sides + j))
    return np.concatenate(verts), np.array(tris, np.int64)


def scene_from_arrays(vertices, triangles, regions=None, region_labels=None):
    triangles = np.asarray(triangles, np.int64)
    if regions is None:
        regions = np.zeros(len(triangles), np.int64)
    return Scene(vertices, triangles, regions, region_labels)
