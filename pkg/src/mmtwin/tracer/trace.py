"""Shoot-and-bounce path discovery with image-method refinement.

Rays leave the transmitter along a nested low-discrepancy set of directions and
bounce specularly up to ``max_depth`` times. Whenever a ray passes within the
capture sphere of the receiver, the sequence of planes it bounced off is
proposed; the image method then solves the exact reflection points for that
sequence and the candidate survives only if every leg is unobstructed and lands
on the proposed plane. First-bounce hits additionally spawn single-scatter
candidates with probability ``scatter_keep_prob``.
"""
from dataclasses import dataclass, asdict

import numpy as np

from ._discover import discover
from .paths import (PathKind, Interaction, PropagationPath, TraceResult, REFLECT, SCATTER)

_PLASTIC = 1.32471795724474602596
_A1 = 1.0 / _PLASTIC
_A2 = 1.0 / _PLASTIC ** 2


@dataclass(frozen=True)
class TraceConfig:
    n_rays: int = 4_000_000
    max_depth: int = 5
    scatter_keep_prob: float = 1e-3
    rx_capture_min: float = 0.1
    rx_capture_frac: float = 0.005
    rng_seed: int = 0
    t_eps: float = 1e-6
    t_far: float = 1e6
    hit_tol: float = 1e-6
    record_probes: bool = False

    def __post_init__(self):
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.scatter_keep_prob <= 1.0:
            raise ValueError("scatter_keep_prob must be in (0, 1]")

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return TraceConfig(**d)


def launch_directions(n, start=0):
    """Nested R2 sequence mapped area-uniformly onto the unit sphere.

    The first ``n`` directions of a larger budget are exactly the directions of
    budget ``n``, which keeps discovery monotone in the ray count.
    """
    i = np.arange(start, start + n, dtype=np.float64)
    u = np.mod(0.5 + i * _A1, 1.0)
    v = np.mod(0.5 + i * _A2, 1.0)
    z = 1.0 - 2.0 * u
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * v
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _splitmix64(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def direction_uniforms(seed, n):
    """One U[0,1) per launch direction, from a stream keyed by (seed, index)."""
    with np.errstate(over="ignore"):
        key = _splitmix64(np.full(n, np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        x = _splitmix64(key ^ np.arange(n, dtype=np.uint64))
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def sample_scatter_direction(normal, rng, size=None):
    """Cosine-weighted (Lambertian) direction(s) in the hemisphere around ``normal``."""
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    m = 1 if size is None else int(size)
    u1 = rng.random(m)
    u2 = rng.random(m)
    r = np.sqrt(u1)
    phi = 2 * np.pi * u2
    local = np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(0.0, 1 - u1))], 1)
    helper = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0, 1.0, 0])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    out = local[:, :1] * t1 + local[:, 1:2] * t2 + local[:, 2:] * n
    # guard the measure-zero tangent draw
    out[out @ n <= 0] = n
    return out[0] if size is None else out


def _mirror_points(p, normal, offset):
    return p - 2.0 * ((p * normal).sum(-1) - offset)[..., None] * normal


def _refine(scene, tx, rx, seqs, cfg):
    """Exact specular paths for plane sequences ``seqs`` (m, k)."""
    m, k = seqs.shape
    nrm = scene.plane_normal[seqs]          # (m, k, 3)
    off = scene.plane_offset[seqs]          # (m, k)
    images = np.empty((m, k, 3))
    prev = np.broadcast_to(tx, (m, 3))
    for j in range(k):
        prev = _mirror_points(prev, nrm[:, j], off[:, j])
        images[:, j] = prev
    pts = np.empty((m, k, 3))
    ok = np.ones(m, bool)
    target = np.broadcast_to(rx, (m, 3)).copy()
    for j in range(k - 1, -1, -1):
        I = images[:, j]
        seg = target - I
        den = (seg * nrm[:, j]).sum(1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (off[:, j] - (I * nrm[:, j]).sum(1)) / den
        good = np.isfinite(s) & (s > 1e-12) & (s < 1 - 1e-12)
        ok &= good
        s = np.where(good, s, 0.5)
        target = I + s[:, None] * seg
        pts[:, j] = target
    # validate every leg by ray casting
    chain = np.concatenate([np.broadcast_to(tx, (m, 1, 3)), pts,
                            np.broadcast_to(rx, (m, 1, 3))], axis=1)
    a = chain[:, :-1].reshape(-1, 3)
    b = chain[:, 1:].reshape(-1, 3)
    v = b - a
    dist = np.linalg.norm(v, axis=1)
    dist_safe = np.where(dist > 0, dist, 1.0)
    d = v / dist_safe[:, None]
    leg = np.tile(np.arange(k + 1), m)
    last = leg == k
    tmin = np.full(len(a), cfg.t_eps)
    tmax = np.where(last, np.maximum(dist - cfg.t_eps, cfg.t_eps), dist + cfg.hit_tol)
    t, tri = scene.intersect_many(a, d, tmin, tmax)
    t = t.reshape(m, k + 1)
    tri = tri.reshape(m, k + 1)
    dist = dist.reshape(m, k + 1)
    ok &= np.all(dist > cfg.t_eps, axis=1)
    ok &= tri[:, k] < 0
    hit_tri = tri[:, :k]
    on_plane = (hit_tri >= 0) & (np.abs(t[:, :k] - dist[:, :k]) <= cfg.hit_tol)
    on_plane &= scene.plane_ids[np.maximum(hit_tri, 0)] == seqs
    ok &= np.all(on_plane, axis=1)
    probes = (a, b)
    return ok, pts, hit_tri, probes


def _oriented(normal, incoming):
    return np.where(((normal * incoming).sum(-1) > 0)[..., None], -normal, normal)


@dataclass
class Discovery:
    """Per-launch-direction outcome of shoot-and-bounce (kept for incremental retraces)."""
    captured: np.ndarray    # (n, D+1) ray passed the capture sphere after k bounces
    tris: np.ndarray        # (n, D) triangle hit at each bounce, -1 after escape
    first_tri: np.ndarray   # (n,)
    first_pt: np.ndarray    # (n, 3)
    seg_a: np.ndarray       # (n, D+1, 3) segment endpoints (recording only)
    seg_b: np.ndarray
    seg_ok: np.ndarray      # (n, D+1)


def discover_rays(scene, tx, rx, cfg, index=None):
    """Shoot the launch directions ``index`` (default: all of them)."""
    dirs = launch_directions(cfg.n_rays)
    if index is not None:
        dirs = np.ascontiguousarray(dirs[index])
    out = discover(tx, rx, dirs, cfg.max_depth, cfg.rx_capture_min, cfg.rx_capture_frac,
                   cfg.t_eps, cfg.t_far, np.ascontiguousarray(scene.normals),
                   cfg.record_probes, *scene._packed.args())
    return Discovery(*out)


def _check_link(tx, rx):
    tx = np.asarray(tx, float)
    rx = np.asarray(rx, float)
    if np.allclose(tx, rx):
        raise ValueError("tx and rx coincide")
    return tx, rx


def trace_paths(scene, tx, rx, config=None):
    """Deduplicated LoS, specular and single-scatter paths between ``tx`` and ``rx``."""
    cfg = config or TraceConfig()
    tx, rx = _check_link(tx, rx)
    disc = discover_rays(scene, tx, rx, cfg) if scene.n_triangles else None
    return assemble(scene, tx, rx, cfg, disc)


def assemble(scene, tx, rx, cfg, disc):
    """Turn a discovery record into the final, validated path set."""
    probes_a, probes_b = [], []
    paths = []

    los_blocked = bool(scene.occluded(tx, rx, eps=0.0)[0]) if scene.n_triangles else False
    probes_a.append(tx[None])
    probes_b.append(rx[None])
    if not los_blocked:
        paths.append(PropagationPath(PathKind.LOS, tx, rx, (), ("los",)))

    if disc is None:
        pa, pb = _stack(probes_a, probes_b) if cfg.record_probes else (None, None)
        return TraceResult(paths, tx, rx, cfg, scene.epoch, scene.uid, pa, pb)

    captured, tris, first_tri, first_pt = disc.captured, disc.tris, disc.first_tri, disc.first_pt
    if cfg.record_probes:
        probes_a.append(disc.seg_a[disc.seg_ok])
        probes_b.append(disc.seg_b[disc.seg_ok])

    # specular: unique plane sequences per depth, refined by the image method
    for k in range(1, cfg.max_depth + 1):
        rows = captured[:, k]
        if not rows.any():
            continue
        seqs = np.unique(scene.plane_ids[tris[rows, :k]], axis=0)
        # a plane cannot be hit twice in a row
        seqs = seqs[np.all(seqs[:, 1:] != seqs[:, :-1], axis=1)] if k > 1 else seqs
        if len(seqs) == 0:
            continue
        ok, pts, hit_tri, (pa, pb) = _refine(scene, tx, rx, seqs, cfg)
        probes_a.append(pa)
        probes_b.append(pb)
        for m in np.flatnonzero(ok):
            chain = np.vstack([tx, pts[m], rx])
            inter = []
            for j in range(k):
                tri = int(hit_tri[m, j])
                n = _oriented(scene.normals[tri], chain[j + 1] - chain[j])
                inter.append(Interaction(pts[m, j].copy(), n, int(scene.regions[tri]),
                                         REFLECT, tri, float(scene.areas[tri])))
            key = ("specular",) + tuple(int(p) for p in seqs[m])
            paths.append(PropagationPath(PathKind.SPECULAR, tx, rx, tuple(inter), key))

    # single-bounce diffuse scattering
    keep = (direction_uniforms(cfg.rng_seed, cfg.n_rays) < cfg.scatter_keep_prob) & (first_tri >= 0)
    idx = np.flatnonzero(keep)
    if len(idx):
        p = first_pt[idx]
        n = _oriented(scene.normals[first_tri[idx]], p - tx)
        facing = ((rx - p) * n).sum(1) > 0
        idx, p, n = idx[facing], p[facing], n[facing]
        if len(idx):
            blocked = scene.occluded(p, np.broadcast_to(rx, p.shape), eps=cfg.t_eps)
            probes_a.append(p)
            probes_b.append(np.broadcast_to(rx, p.shape))
            for i, pt, nn, bl in zip(idx, p, n, blocked):
                if bl:
                    continue
                tri = int(first_tri[i])
                inter = (Interaction(pt.copy(), nn.copy(), int(scene.regions[tri]), SCATTER, tri,
                                     float(scene.areas[tri])),)
                paths.append(PropagationPath(PathKind.SCATTERED, tx, rx, inter,
                                             ("scattered", int(i))))

    pa, pb = _stack(probes_a, probes_b) if cfg.record_probes else (None, None)
    res = TraceResult(paths, tx, rx, cfg, scene.epoch, scene.uid, pa, pb)
    if cfg.record_probes:
        res.discovery = disc
        res.layout = scene.layout()
    return res


def _stack(a, b):
    return np.concatenate(a), np.concatenate(b)
