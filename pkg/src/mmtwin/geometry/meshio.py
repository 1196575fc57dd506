"""PLY mesh ingestion with per-face surface regions.

Region ids come from an integer face property (``region``, ``region_id``,
``surface_id`` or ``material_id``) or from a companion text file with lines::

    start_face end_face region_id label

(face ranges inclusive, ``#`` starts a comment). Region ids are relabelled to
a contiguous ``0..K-1`` in ascending order of the original ids.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement

from .scene import Scene

log = logging.getLogger(__name__)

REGION_PROPERTIES = ("region", "region_id", "surface_id", "material_id")


class MeshFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RegionRange:
    start: int
    end: int
    region: int
    label: str


def read_region_map(path):
    ranges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 3)
        if len(parts) < 3:
            raise MeshFormatError(f"{path}:{lineno}: expected 'start end region [label]'")
        start, end, region = (int(x) for x in parts[:3])
        if end < start:
            raise MeshFormatError(f"{path}:{lineno}: end_face < start_face")
        ranges.append(RegionRange(start, end, region, parts[3] if len(parts) > 3 else ""))
    return ranges


def write_region_map(path, ranges):
    lines = [f"{r.start} {r.end} {r.region} {r.label}".rstrip() for r in ranges]
    Path(path).write_text("\n".join(lines) + "\n")


def _faces(ply):
    if "face" not in ply:
        raise MeshFormatError("PLY has no face element")
    face = ply["face"]
    names = [p.name for p in face.properties]
    key = next((n for n in ("vertex_indices", "vertex_index") if n in names), None)
    if key is None:
        raise MeshFormatError("PLY faces lack vertex_indices")
    polys = face.data[key]
    region = None
    for name in REGION_PROPERTIES:
        if name in names:
            region = np.asarray(face.data[name], dtype=np.int64)
            break
    return polys, region


def load_mesh(path, region_map=None):
    """Load a PLY mesh (ASCII or binary) into a :class:`Scene`.

    Polygons are fan-triangulated; every triangle inherits its source face's
    region. Zero-area triangles are dropped; the count is logged and stored on
    ``scene.dropped_degenerate``.
    """
    path = Path(path)
    try:
        ply = PlyData.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise MeshFormatError(f"cannot parse {path}: {exc}") from exc
    vx = ply["vertex"]
    vertices = np.stack([np.asarray(vx[c], float) for c in ("x", "y", "z")], axis=1)
    polys, face_region = _faces(ply)
    n_faces = len(polys)
    if n_faces == 0 or len(vertices) == 0:
        raise MeshFormatError(f"{path}: empty mesh")

    labels_by_id = {}
    if face_region is None:
        if region_map is None:
            guess = path.with_suffix(".regions")
            region_map = guess if guess.exists() else None
        if region_map is None:
            raise MeshFormatError(f"{path}: no face region attribute and no region mapping file")
        face_region = np.full(n_faces, -1, np.int64)
        for r in read_region_map(region_map):
            if r.start < 0 or r.end >= n_faces:
                raise MeshFormatError(f"region range {r.start}-{r.end} outside 0..{n_faces - 1}")
            face_region[r.start:r.end + 1] = r.region
            if r.label:
                labels_by_id.setdefault(r.region, r.label)
        if np.any(face_region < 0):
            missing = int(np.sum(face_region < 0))
            raise MeshFormatError(f"{missing} faces not covered by the region mapping")

    tris, regs = [], []
    for poly, reg in zip(polys, face_region):
        poly = np.asarray(poly, np.int64)
        for k in range(1, len(poly) - 1):
            tris.append((poly[0], poly[k], poly[k + 1]))
            regs.append(reg)
    tris = np.asarray(tris, np.int64).reshape(-1, 3)
    regs = np.asarray(regs, np.int64)
    if tris.size and (tris.min() < 0 or tris.max() >= len(vertices)):
        raise MeshFormatError("face references a missing vertex")

    c = vertices[tris]
    area = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
    scale = max(np.ptp(vertices, axis=0).max(), 1e-12)
    good = area > 1e-12 * scale * scale
    dropped = int(np.sum(~good))
    if dropped:
        log.warning("dropped %d degenerate triangle(s) from %s", dropped, path)
    tris, regs = tris[good], regs[good]
    if len(tris) == 0:
        raise MeshFormatError(f"{path}: no non-degenerate triangles")

    original_ids, contiguous = np.unique(regs, return_inverse=True)
    labels = [labels_by_id.get(int(o), f"region_{int(o)}") for o in original_ids]
    scene = Scene(vertices, tris, contiguous.reshape(-1), labels)
    scene.dropped_degenerate = dropped
    scene.source_region_ids = original_ids
    return scene


def save_mesh(path, vertices, triangles, regions=None, binary=True):
    """Write a PLY with an optional integer ``region`` face property."""
    vertices = np.asarray(vertices, float)
    triangles = np.asarray(triangles, np.int64)
    vx = np.empty(len(vertices), dtype=[("x", "f8"), ("y", "f8"), ("z", "f8")])
    vx["x"], vx["y"], vx["z"] = vertices.T
    fields = [("vertex_indices", "i4", (3,))]
    if regions is not None:
        fields.append(("region", "i4"))
    fc = np.empty(len(triangles), dtype=fields)
    fc["vertex_indices"] = triangles
    if regions is not None:
        fc["region"] = np.asarray(regions)
    ply = PlyData([PlyElement.describe(vx, "vertex"), PlyElement.describe(fc, "face")],
                  text=not binary, byte_order="<")
    ply.write(str(path))
