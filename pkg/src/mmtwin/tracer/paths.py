"""Propagation path records and their text serialisation."""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class PathKind(str, Enum):
    LOS = "los"
    SPECULAR = "specular"
    SCATTERED = "scattered"


REFLECT = "reflect"
SCATTER = "scatter"


@dataclass(frozen=True)
class Interaction:
    point: np.ndarray
    normal: np.ndarray  # unit, facing the incoming wave
    region: int
    kind: str
    triangle: int = -1
    area: float = float("nan")  # area of the hit triangle (m^2)


@dataclass(frozen=True)
class PropagationPath:
    kind: PathKind
    tx: np.ndarray
    rx: np.ndarray
    interactions: tuple = ()
    key: tuple = ()

    @property
    def vertices(self):
        return np.array([self.tx, *(it.point for it in self.interactions), self.rx])

    @property
    def segment_lengths(self):
        return np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)

    @property
    def length(self):
        return float(self.segment_lengths.sum())

    @property
    def regions(self):
        return tuple(it.region for it in self.interactions)

    @property
    def depth(self):
        return len(self.interactions)

    def segments(self):
        v = self.vertices
        return v[:-1], v[1:]


@dataclass
class TraceResult:
    """Deduplicated path set for one TX-RX link plus what produced it."""
    paths: list
    tx: np.ndarray
    rx: np.ndarray
    config: object
    epoch: int = 0
    scene_uid: int = -1
    # every segment tested while tracing; present when the config asks to record
    probe_a: np.ndarray = None
    probe_b: np.ndarray = None
    # per-ray discovery record and triangle layout, for incremental retraces
    discovery: object = None
    layout: tuple = None

    def __iter__(self):
        return iter(self.paths)

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, i):
        return self.paths[i]

    def keys(self):
        return [p.key for p in self.paths]

    def by_key(self):
        return {p.key: p for p in self.paths}

    def los(self):
        return next((p for p in self.paths if p.kind is PathKind.LOS), None)


def _fmt_vec(v):
    return ",".join(repr(float(x)) for x in v)


def format_path(path):
    key = ",".join(str(k) for k in path.key[1:])
    regions = ",".join(str(r) for r in path.regions)
    points = ";".join(_fmt_vec(it.point) for it in path.interactions)
    return f"{path.kind.value}\t{key}\t{regions}\t{points}\t{path.length!r}"


def write_paths(fh, result):
    """One path per line: kind, key, region sequence, interaction points, length."""
    fh.write(f"# tx={_fmt_vec(result.tx)} rx={_fmt_vec(result.rx)} epoch={result.epoch}\n")
    fh.write("# kind\tkey\tregions\tpoints\tlength_m\n")
    for p in result.paths:
        fh.write(format_path(p) + "\n")


def read_path_lines(lines):
    """Parse :func:`write_paths` output into plain dicts (for comparison/debugging)."""
    out = []
    for line in lines:
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        kind, key, regions, points, length = line.split("\t")
        out.append({
            "kind": kind,
            "key": tuple(int(k) for k in key.split(",") if k),
            "regions": tuple(int(r) for r in regions.split(",") if r),
            "points": [tuple(float(x) for x in p.split(",")) for p in points.split(";") if p],
            "length": float(length),
        })
    return out
