"""Vision priors: projection, multi-view fusion, text matching, region assignment.

Feature extraction happens upstream; this module consumes exported per-point
features and text embeddings and turns them into per-region material guesses
and initial embeddings.

Binary export layouts (little-endian, every record prefixed by its byte length):

semantic export ``MMSE``::

    header  : b"MMSE" u32 version=1, u32 C, u32 n_records
    record  : u32 nbytes, f64[3] xyz, u8 mode, u32 n_views,
              mode 0 -> f32[C] fused feature
              mode 1 -> n_views x (u32 view id, f32[C])

text embeddings ``MMTE``::

    header  : b"MMTE" u32 version=1, u32 C, u32 n_labels
    record  : u32 nbytes, u16 len + utf-8 label, u32 n_names,
              n_names x (u16 len + utf-8 name, f32[C])

The text variants are JSON lines with the same content (see ``_read_*_jsonl``).
"""
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
import io
import json
import struct
import warnings

import numpy as np
import yaml

from .materials import MaterialEmbedding, Readout, load_material_db

DEPTH_EPS = 1e-9
ASSOCIATION_RADIUS = 0.05


# -- cameras ------------------------------------------------------------------------
@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))     # world -> camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        R = np.asarray(self.rotation, float)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation must be orthonormal")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, float))

    def to_camera(self, p):
        return self.rotation @ np.asarray(p, float) + self.translation


@dataclass(frozen=True)
class Projection:
    u: float
    v: float
    status: str     # "ok", "out_of_frame" or "behind"

    @property
    def visible(self):
        return self.status == "ok"


def project_point(camera, p):
    """Pinhole projection of world point ``p`` to pixel coordinates."""
    p = np.asarray(p, float)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    x, y, z = camera.to_camera(p)
    if abs(z) <= DEPTH_EPS:
        raise ValueError("point lies on the camera plane")
    if z < 0:
        return Projection(np.nan, np.nan, "behind")
    u = camera.fx * x / z + camera.cx
    v = camera.fy * y / z + camera.cy
    inside = 0 <= u < camera.width and 0 <= v < camera.height
    return Projection(float(u), float(v), "ok" if inside else "out_of_frame")


def fuse_views(features):
    """Arithmetic mean of the per-view features of one point."""
    feats = [np.asarray(f, float) for f in features]
    if len(feats) == 0:
        raise ValueError("no visible views to fuse")
    if len({f.shape for f in feats}) != 1:
        raise ValueError("per-view features differ in length")
    return np.mean(np.stack(feats), axis=0)


# -- text embeddings ------------------------------------------------------------------
@dataclass
class TextEmbeddingSet:
    """Labels in priority order, each with one or more unit vectors (its names)."""
    labels: list
    names: list         # per label: list of names (label first, then synonyms)
    vectors: list       # per label: (n_names, C) array

    def __post_init__(self):
        if not (len(self.labels) == len(self.names) == len(self.vectors)):
            raise ValueError("labels, names and vectors must align")
        dims = set()
        for lab, vec in zip(self.labels, self.vectors):
            vec = np.atleast_2d(np.asarray(vec, float))
            dims.add(vec.shape[1])
            if np.any(np.abs(np.linalg.norm(vec, axis=1) - 1.0) > 1e-6):
                raise ValueError(f"text vectors for {lab!r} are not unit-norm")
        if len(dims) > 1:
            raise ValueError("text vectors differ in length")
        self.vectors = [np.atleast_2d(np.asarray(v, float)) for v in self.vectors]

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.vectors[0].shape[1] if self.vectors else 0

    def stacked(self):
        """All vectors (n, C) and the label index of each row."""
        mats = np.concatenate(self.vectors)
        owner = np.concatenate([np.full(len(v), i) for i, v in enumerate(self.vectors)])
        return mats, owner


def label_scores(feature, text_set):
    """Per-label score: max cosine over that label's vectors."""
    f = np.asarray(feature, float)
    nrm = np.linalg.norm(f)
    if nrm == 0:
        raise ValueError("feature must be non-zero")
    mats, owner = text_set.stacked()
    cos = np.clip(mats @ (f / nrm), -1.0, 1.0)
    scores = np.full(len(text_set), -np.inf)
    np.maximum.at(scores, owner, cos)
    return scores


def match_material(feature, text_set):
    """(label, score) of the best-matching label; ties go to the earlier label."""
    if len(text_set) == 0:
        raise ValueError("empty text embedding set")
    scores = label_scores(feature, text_set)
    i = int(np.argmax(scores))      # first maximum
    return text_set.labels[i], float(scores[i])


# -- roughness -----------------------------------------------------------------------
def load_roughness_table(path=None):
    if path is None:
        text = resources.files("mmtwin").joinpath("data", "roughness.yaml").read_text()
        doc = yaml.safe_load(text)
    else:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    table = {}
    for rec in doc["levels"]:
        lo, hi = (float(x) for x in rec["s_range"])
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"bad scattering interval for {rec['label']!r}")
        table[rec["label"].strip().lower()] = (rec["label"], float(rec["ra_um"]), (lo, hi))
    return table


def roughness_to_scattering(level_label, table=None):
    """Scattering-coefficient interval for a roughness level label."""
    table = table if table is not None else load_roughness_table()
    try:
        return table[level_label.strip().lower()][2]
    except KeyError:
        raise KeyError(f"unknown roughness level {level_label!r}") from None


# -- semantic points ------------------------------------------------------------------
@dataclass
class SemanticPoint:
    xyz: np.ndarray
    feature: np.ndarray = None          # fused feature, if exported that way
    views: list = field(default_factory=list)   # [(view id, feature), ...]

    def fused(self):
        if self.feature is not None:
            return np.asarray(self.feature, float)
        return fuse_views([f for _, f in self.views])


@dataclass
class RegionAssignment:
    labels: list                 # per region material label
    materials: list              # RadioMaterial per region
    counts: list                 # per region Counter of matched labels
    n_points: np.ndarray         # points associated per region
    fallback: list               # regions that used the default material
    embedding: MaterialEmbedding = None

    def params(self):
        return self.embedding.params()


def associate_points(scene, points, radius=ASSOCIATION_RADIUS):
    """Region id of the nearest triangle for each point, or -1 beyond ``radius``."""
    xyz = np.array([p.xyz for p in points], float).reshape(-1, 3)
    if len(xyz) == 0:
        return np.zeros(0, np.int64)
    dist, _, tri = scene.nearest(xyz)
    reg = scene.regions[tri].astype(np.int64)
    return np.where(dist <= radius, reg, -1)


def assign_regions(scene, points, text_set, db=None, default="concrete", readout=None,
                   weighted=False, radius=ASSOCIATION_RADIUS, roughness=None):
    """Majority-vote material per surface region and the matching initial embeddings.

    ``roughness`` optionally maps region id -> roughness level label; the
    scattering coefficient then comes from that level instead of the database.
    """
    if len(points) == 0:
        raise ValueError("empty semantic export")
    db = db or load_material_db()
    readout = readout or Readout.random()
    K = scene.n_regions
    region = associate_points(scene, points, radius)
    order = {lab: i for i, lab in enumerate(text_set.labels)}
    votes = [Counter() for _ in range(K)]
    for p, r in zip(points, region):
        if r < 0:
            continue
        lab, score = match_material(p.fused(), text_set)
        votes[r][lab] += score if weighted else 1
    labels, mats, fallback = [], [], []
    for k in range(K):
        if not votes[k]:
            fallback.append(k)
            labels.append(db.lookup(default).label)
        else:
            best = max(votes[k].items(), key=lambda kv: (kv[1], -order[kv[0]]))
            labels.append(db.lookup(best[0]).label)
        mats.append(db.lookup(labels[-1]))
    if fallback:
        warnings.warn(f"regions {fallback} received no semantic points; "
                      f"using default material {default!r}", stacklevel=2)
    sig = np.array([m.sigma for m in mats])
    eps = np.array([m.eps_r for m in mats])
    s = np.array([m.s_mid for m in mats])
    table = None
    for k, lvl in (roughness or {}).items():
        table = table or load_roughness_table()
        lo, hi = roughness_to_scattering(lvl, table)
        s[k] = 0.5 * (lo + hi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")   # metal-like eps_r == 1 is clamped on purpose
        emb = MaterialEmbedding.from_params(sig, eps, s, readout, labels)
    n_points = np.bincount(region[region >= 0], minlength=K)
    return RegionAssignment(labels, mats, votes, n_points, fallback, emb)


# -- files ----------------------------------------------------------------------------
_SE_MAGIC = b"MMSE"
_TE_MAGIC = b"MMTE"


def write_semantic_export(path, points, dim):
    out = io.BytesIO()
    out.write(_SE_MAGIC + struct.pack("<III", 1, dim, len(points)))
    for p in points:
        rec = io.BytesIO()
        rec.write(struct.pack("<3d", *np.asarray(p.xyz, float)))
        if p.feature is not None:
            rec.write(struct.pack("<BI", 0, 0))
            rec.write(np.asarray(p.feature, "<f4").tobytes())
        else:
            rec.write(struct.pack("<BI", 1, len(p.views)))
            for vid, f in p.views:
                rec.write(struct.pack("<I", vid))
                rec.write(np.asarray(f, "<f4").tobytes())
        body = rec.getvalue()
        out.write(struct.pack("<I", len(body)) + body)
    with open(path, "wb") as fh:
        fh.write(out.getvalue())


def _read_semantic_binary(buf):
    if buf[:4] != _SE_MAGIC:
        raise ValueError("not a semantic export")
    version, dim, n = struct.unpack_from("<III", buf, 4)
    if version != 1:
        raise ValueError(f"unsupported semantic export version {version}")
    off = 16
    pts = []
    for _ in range(n):
        (nbytes,) = struct.unpack_from("<I", buf, off)
        off += 4
        end = off + nbytes
        xyz = np.array(struct.unpack_from("<3d", buf, off))
        mode, nv = struct.unpack_from("<BI", buf, off + 24)
        o = off + 29
        if mode == 0:
            feat = np.frombuffer(buf, "<f4", dim, o).astype(float)
            pts.append(SemanticPoint(xyz, feat))
        else:
            views = []
            for _ in range(nv):
                (vid,) = struct.unpack_from("<I", buf, o)
                views.append((vid, np.frombuffer(buf, "<f4", dim, o + 4).astype(float)))
                o += 4 + 4 * dim
            pts.append(SemanticPoint(xyz, None, views))
        if o + (4 * dim if mode == 0 else 0) != end:
            raise ValueError("semantic record length mismatch")
        off = end
    return pts


def _read_semantic_jsonl(text):
    pts = []
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "feature" in rec:
            pts.append(SemanticPoint(np.array(rec["xyz"], float), np.array(rec["feature"], float)))
        else:
            views = [(int(v["id"]), np.array(v["feature"], float)) for v in rec["views"]]
            pts.append(SemanticPoint(np.array(rec["xyz"], float), None, views))
    return pts


def read_semantic_export(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    pts = _read_semantic_binary(buf) if buf[:4] == _SE_MAGIC else _read_semantic_jsonl(buf.decode())
    if not pts:
        raise ValueError("empty semantic export")
    dims = {len(p.fused()) for p in pts}
    if len(dims) != 1:
        raise ValueError("semantic features differ in length")
    for p in pts:
        if not np.all(np.isfinite(p.fused())):
            raise ValueError("non-finite semantic feature")
    return pts


def _pack_str(s):
    b = s.encode()
    return struct.pack("<H", len(b)) + b


def write_text_embeddings(path, text_set):
    out = io.BytesIO()
    out.write(_TE_MAGIC + struct.pack("<III", 1, text_set.dim, len(text_set)))
    for lab, names, vec in zip(text_set.labels, text_set.names, text_set.vectors):
        rec = io.BytesIO()
        rec.write(_pack_str(lab) + struct.pack("<I", len(names)))
        for nm, v in zip(names, vec):
            rec.write(_pack_str(nm) + np.asarray(v, "<f4").tobytes())
        body = rec.getvalue()
        out.write(struct.pack("<I", len(body)) + body)
    with open(path, "wb") as fh:
        fh.write(out.getvalue())


def _unpack_str(buf, off):
    (n,) = struct.unpack_from("<H", buf, off)
    return buf[off + 2:off + 2 + n].decode(), off + 2 + n


def _unit_rows(v):
    # float32 storage loses ~1e-7; renormalise in float64
    v = np.atleast_2d(np.asarray(v, float))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def read_text_embeddings(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    labels, names, vecs = [], [], []
    if buf[:4] == _TE_MAGIC:
        version, dim, n = struct.unpack_from("<III", buf, 4)
        off = 16
        for _ in range(n):
            (nbytes,) = struct.unpack_from("<I", buf, off)
            off += 4
            end = off + nbytes
            lab, o = _unpack_str(buf, off)
            (k,) = struct.unpack_from("<I", buf, o)
            o += 4
            nm, vv = [], []
            for _ in range(k):
                s, o = _unpack_str(buf, o)
                nm.append(s)
                vv.append(np.frombuffer(buf, "<f4", dim, o).astype(float))
                o += 4 * dim
            if o != end:
                raise ValueError("text-embedding record length mismatch")
            labels.append(lab)
            names.append(nm)
            vecs.append(_unit_rows(vv))
            off = end
    else:
        for line in buf.decode().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            labels.append(rec["label"])
            names.append(list(rec["vectors"].keys()))
            vecs.append(_unit_rows(list(rec["vectors"].values())))
    return TextEmbeddingSet(labels, names, vecs)


def save_embedding(path, embedding, readout_seed=None):
    """Per-region labels, physical parameters and embeddings as YAML."""
    sig, eps, s = embedding.params()
    labels = list(embedding.labels or [""] * embedding.n_regions)
    doc = {
        "latent_dim": int(embedding.readout.latent_dim),
        "readout_seed": readout_seed,
        "readout": embedding.readout.W.tolist(),
        "regions": [
            {"region": k, "label": labels[k], "sigma": float(sig[k]),
             "eps_r": float(eps[k]), "s": float(s[k]),
             "vector": embedding.vectors[k].tolist()}
            for k in range(embedding.n_regions)
        ],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def save_assignment(path, assignment, readout_seed=None):
    save_embedding(path, assignment.embedding, readout_seed)


def load_assignment(path):
    """Inverse of :func:`save_assignment`; returns a :class:`MaterialEmbedding`."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    ro = Readout(np.array(doc["readout"], float))
    regs = sorted(doc["regions"], key=lambda r: r["region"])
    vec = np.array([r["vector"] for r in regs], float)
    return MaterialEmbedding(vec, ro, [r["label"] for r in regs])
