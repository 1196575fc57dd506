"""Moving bodies as proxy meshes, dirty-region invalidation and incremental retraces.

A retrace after a proxy moves is exact: a launch direction whose recorded
segments all miss the dirty box meets exactly the same triangles in the new
scene, so only directions that touched the box are shot again. The candidate
set is then re-validated in the new scene, which is cheap. Links whose every
tested segment misses the box are returned unchanged.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import synthesize
from .geometry import box_mesh, cylinder_mesh
from .metrics import shadow_loss
from .tracer import TraceConfig, trace_paths
from .tracer.trace import Discovery, assemble, discover_rays

DIRTY_MARGIN = 0.1


class StaleEpoch(RuntimeError):
    """Cached paths were not traced on the epoch the dirty region starts from."""


@dataclass(frozen=True)
class Pose:
    position: np.ndarray        # base centre (m)
    yaw: float = 0.0            # rad about +z

    def matrix(self):
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class ProxyObject:
    """Canned cylinder or box standing on its base centre."""
    shape: str = "cylinder"
    radius: float = 0.25
    height: float = 1.7
    size: tuple = (0.5, 0.3, 1.7)       # box extents (x, y, z)
    n_sides: int = 16
    material: str = "human body"
    proxy_id: str = "proxy"

    def __post_init__(self):
        if self.shape not in ("cylinder", "box"):
            raise ValueError("shape must be 'cylinder' or 'box'")
        if self.shape == "cylinder" and not (self.radius > 0 and self.height > 0):
            raise ValueError("cylinder dimensions must be positive")
        if self.shape == "box" and not all(x > 0 for x in self.size):
            raise ValueError("box dimensions must be positive")

    def local_corners(self):
        if self.shape == "cylinder":
            v, t = cylinder_mesh(self.radius, self.height, self.n_sides)[:2]
        else:
            sx, sy, sz = self.size
            v, t = box_mesh((-sx / 2, -sy / 2, 0.0), (sx / 2, sy / 2, sz))[:2]
        return v[t]

    def corners(self, pose):
        R = pose.matrix()
        return self.local_corners() @ R.T + np.asarray(pose.position, float)

    def bbox(self, pose):
        c = self.corners(pose).reshape(-1, 3)
        return c.min(0), c.max(0)

    @property
    def n_triangles(self):
        return len(self.local_corners())


@dataclass(frozen=True)
class DirtyRegion:
    lo: np.ndarray
    hi: np.ndarray
    epoch_from: int = 0
    epoch_to: int = 1

    def __post_init__(self):
        if not np.all(np.asarray(self.hi) > np.asarray(self.lo)):
            raise ValueError("dirty region must be a non-degenerate box")

    @classmethod
    def union(cls, boxes, margin=DIRTY_MARGIN, epoch_from=0, epoch_to=1):
        lo = np.min([b[0] for b in boxes], axis=0) - margin
        hi = np.max([b[1] for b in boxes], axis=0) + margin
        return cls(lo, hi, epoch_from, epoch_to)

    def shrink(self, amount):
        return DirtyRegion(self.lo + amount, self.hi - amount, self.epoch_from, self.epoch_to)


def segments_hit_box(a, b, lo, hi):
    """True where the closed segment a->b touches the axis-aligned box [lo, hi]."""
    a = np.asarray(a, float).reshape(-1, 3)
    b = np.asarray(b, float).reshape(-1, 3)
    d = b - a
    t0 = np.zeros(len(a))
    t1 = np.ones(len(a))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for k in range(3):
            ta = (lo[k] - a[:, k]) / d[:, k]
            tb = (hi[k] - a[:, k]) / d[:, k]
            par = d[:, k] == 0
            inside = (a[:, k] >= lo[k]) & (a[:, k] <= hi[k])
            lo_t = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
            hi_t = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
            t0 = np.maximum(t0, lo_t)
            t1 = np.minimum(t1, hi_t)
    return t0 <= t1


def insert_proxy(scene, proxy, pose, prev_pose=None, margin=DIRTY_MARGIN):
    """Place ``proxy`` at ``pose`` (moving it if already present).

    Returns the next scene epoch and the dirty region covering the previous and
    the new placement.
    """
    corners = proxy.corners(pose)
    boxes = [proxy.bbox(pose)]
    present = any(p.proxy_id == proxy.proxy_id for p in scene.proxies)
    if present:
        old = scene.proxy(proxy.proxy_id).corners.reshape(-1, 3)
        boxes.append((old.min(0), old.max(0)))
        new = scene.replace_proxy(proxy.proxy_id, corners)
    else:
        if prev_pose is not None:
            boxes.append(proxy.bbox(prev_pose))
        new = scene.with_proxy(proxy.proxy_id, corners)
    return new, DirtyRegion.union(boxes, margin, scene.epoch, new.epoch)


def remove_proxy(scene, proxy_id, margin=DIRTY_MARGIN):
    old = scene.proxy(proxy_id).corners.reshape(-1, 3)
    new = scene.without_proxy(proxy_id)
    return new, DirtyRegion.union([(old.min(0), old.max(0))], margin, scene.epoch, new.epoch)


def _layout_compatible(old, new, moved):
    """Triangle ids outside the changed proxy blocks are identical in both layouts."""
    if old is None or old[:2] != new[:2]:
        return False
    a, b = list(old[2]), list(new[2])
    if a == b:
        return True
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    return (long_[:len(short)] == short
            and all(pid in moved for pid, _ in long_[len(short):]))


def retrace_link(scene, cached, dirty, moved=()):
    """Incremental retrace of one link; returns (result, n_rays_reshot)."""
    cfg = cached.config
    if cached.epoch != dirty.epoch_from:
        raise StaleEpoch(f"cached epoch {cached.epoch}, dirty region from {dirty.epoch_from}")
    if scene.epoch != dirty.epoch_to:
        raise StaleEpoch(f"scene epoch {scene.epoch}, dirty region to {dirty.epoch_to}")
    if cached.probe_a is None:
        raise ValueError("incremental retrace needs traces made with record_probes=True")
    if cached.discovery is None:
        return trace_paths(scene, cached.tx, cached.rx, cfg), cfg.n_rays
    old = cached.discovery
    hit = segments_hit_box(old.seg_a, old.seg_b, dirty.lo, dirty.hi).reshape(old.seg_ok.shape)
    rays = np.flatnonzero(np.any(hit & old.seg_ok, axis=1))
    if not len(rays) and not np.any(segments_hit_box(cached.probe_a, cached.probe_b,
                                                     dirty.lo, dirty.hi)):
        kept = type(cached)(cached.paths, cached.tx, cached.rx, cfg, scene.epoch, scene.uid,
                            cached.probe_a, cached.probe_b, cached.discovery, scene.layout())
        return kept, 0
    if not _layout_compatible(cached.layout, scene.layout(), set(moved)):
        return trace_paths(scene, cached.tx, cached.rx, cfg), cfg.n_rays
    disc = Discovery(*(x.copy() for x in (old.captured, old.tris, old.first_tri, old.first_pt,
                                           old.seg_a, old.seg_b, old.seg_ok)))
    if len(rays):
        part = discover_rays(scene, cached.tx, cached.rx, cfg, rays)
        for name in ("captured", "tris", "first_tri", "first_pt", "seg_a", "seg_b", "seg_ok"):
            getattr(disc, name)[rays] = getattr(part, name)
    return assemble(scene, cached.tx, cached.rx, cfg, disc), len(rays)


def invalidate_and_retrace(scene, cache, dirty, moved=()):
    """Update every cached link for the new scene epoch.

    ``cache`` maps link ids to trace results of the previous epoch; returns the
    updated mapping and, per link, the number of launch directions re-shot.
    """
    out, work = {}, {}
    for link, res in cache.items():
        out[link], work[link] = retrace_link(scene, res, dirty, moved)
    return out, work


# -- trajectories ---------------------------------------------------------------------
def read_trajectory(path):
    """Rows of ``t_s, x, y, z, yaw`` (yaw in degrees) -> (times, [Pose])."""
    times, poses = [], []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            times.append(float(r["t_s"]))
            poses.append(Pose(np.array([float(r["x"]), float(r["y"]), float(r["z"])]),
                              np.radians(float(r["yaw"]))))
    if not poses:
        raise ValueError(f"{path}: empty trajectory")
    return np.array(times), poses


def write_trajectory(path, times, poses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "x", "y", "z", "yaw"])
        for t, p in zip(times, poses):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in p.position]
                       + [repr(float(np.degrees(p.yaw)))])


def straight_walk(start, end, n_steps, dt=0.1):
    start, end = np.asarray(start, float), np.asarray(end, float)
    heading = np.arctan2(*(end - start)[[1, 0]])
    ts = np.arange(n_steps) * dt
    return ts, [Pose(start + (end - start) * k / max(n_steps - 1, 1), heading)
                for k in range(n_steps)]


def extend_params(params, material):
    """Append one region (the proxy) with ``material``'s parameters."""
    sig, eps, s = (np.asarray(x, float) for x in params)
    m_sig, m_eps, m_s = material.params()
    return np.append(sig, m_sig), np.append(eps, m_eps), np.append(s, m_s)


@dataclass
class SweepStep:
    t: float
    pose: Pose
    result: object
    field: complex
    shadow_loss_db: float
    rays_reshot: dict = field(default_factory=dict)
    touches_proxy: bool = False
    unblocked: bool = False         # path set identical to the proxy-free one


def sweep(scene, proxy, times, poses, links, params, proxy_material, freq,
          config=None, check_full=False):
    """Walk ``proxy`` along ``poses`` and re-trace ``links`` incrementally.

    ``links`` maps link id -> (tx, rx). ``params`` are the base-scene region
    parameters; the proxy region gets ``proxy_material``. The shadow loss of a
    link compares the unblocked total field (scene without the proxy) with the
    field at each step. With ``check_full`` each step is also fully re-traced
    and the comparison is returned alongside.
    """
    cfg = (config or TraceConfig()).replace(record_probes=True)
    base = {k: trace_paths(scene, tx, rx, cfg) for k, (tx, rx) in links.items()}
    ref = {k: _total_field(r, params, freq) for k, r in base.items()}
    full_params = extend_params(params, proxy_material)
    cache, cur = base, scene
    steps, mismatches = {k: [] for k in links}, []
    for i, (t, pose) in enumerate(zip(times, poses)):
        cur, dirty = insert_proxy(cur, proxy, pose)
        cache, work = invalidate_and_retrace(cur, cache, dirty, moved={proxy.proxy_id})
        region = cur.proxy(proxy.proxy_id).region
        for k, res in cache.items():
            e = _total_field(res, full_params, freq)
            touches = any(region in p.regions for p in res.paths)
            clear = res.keys() == base[k].keys()
            steps[k].append(SweepStep(float(t), pose, res, e, float(shadow_loss(ref[k], e)),
                                      {k: work[k]}, touches, clear))
            if check_full:
                full = trace_paths(cur, res.tx, res.rx, cfg)
                if not same_paths(res, full):
                    mismatches.append((i, k))
    return steps, mismatches


def _total_field(result, params, freq):
    mpcs, _ = synthesize(result, params, freq)
    return complex(sum(m.amplitude for m in mpcs))


def same_paths(a, b, tol=0.0):
    """Same keys in the same order and interaction points within ``tol``."""
    if a.keys() != b.keys():
        return False
    for p, q in zip(a.paths, b.paths):
        if p.regions != q.regions:
            return False
        if np.max(np.abs(p.vertices - q.vertices), initial=0.0) > tol:
            return False
    return True


def write_shadow_csv(path, steps):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["link", "t_s", "x", "y", "z", "shadow_loss_db", "n_paths", "rays_reshot"])
        for link, seq in steps.items():
            for st in seq:
                w.writerow([link, repr(st.t)] + [repr(float(x)) for x in st.pose.position]
                           + [repr(st.shadow_loss_db), len(st.result.paths),
                              sum(st.rays_reshot.values())])
