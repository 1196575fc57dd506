"""Radio material database and the trainable material embedding.

Each surface region owns a latent vector ``v``. Three fixed read-out vectors
map it to physical parameters::

    sigma = exp(v . w1)           (S/m, > 0)
    eps_r = 1 + exp(v . w2)       (>= 1)
    S     = sigmoid(v . w3)       (in (0, 1))

The read-outs are orthonormal rows drawn from a seeded generator and are not
trained, so the inverse map used for initialisation is well posed.
"""
from dataclasses import dataclass, field
from importlib import resources
import warnings

import numpy as np
import yaml
from scipy.special import expit, logit

EPS0 = 8.8541878128e-12
C0 = 299_792_458.0
DEFAULT_LATENT_DIM = 8

# pre-activation clip keeping sigma > 0 and S strictly inside (0, 1) in float64
_EXP_CLIP = 700.0
_LOGIT_CLIP = 36.0


class MaterialNotFound(KeyError):
    pass


@dataclass(frozen=True)
class RadioMaterial:
    label: str
    eps_r: float
    sigma: float
    s_range: tuple
    synonyms: tuple = ()
    band_ghz: tuple = (0.0, np.inf)

    def __post_init__(self):
        lo, hi = self.s_range
        if not self.eps_r >= 1.0:
            raise ValueError(f"{self.label}: eps_r must be >= 1")
        if not self.sigma > 0.0:
            raise ValueError(f"{self.label}: sigma must be > 0")
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"{self.label}: need 0 <= S_lo <= S_hi <= 1")

    @property
    def s_mid(self):
        return 0.5 * (self.s_range[0] + self.s_range[1])

    def params(self):
        """(sigma, eps_r, S) with S at the interval midpoint."""
        return self.sigma, self.eps_r, self.s_mid


class MaterialDatabase:
    """Case-insensitive lookup by label or synonym; keeps file order."""

    def __init__(self, materials, frequency_ghz=None):
        self.materials = list(materials)
        self.frequency_ghz = frequency_ghz
        self._index = {}
        for m in self.materials:
            for name in (m.label, *m.synonyms):
                key = name.strip().lower()
                if key in self._index and self._index[key] is not m:
                    raise ValueError(f"duplicate material label or synonym: {name!r}")
                self._index[key] = m

    def __len__(self):
        return len(self.materials)

    def __iter__(self):
        return iter(self.materials)

    def __contains__(self, name):
        return name.strip().lower() in self._index

    def lookup(self, name):
        try:
            return self._index[name.strip().lower()]
        except KeyError:
            raise MaterialNotFound(name) from None

    def labels(self):
        return [m.label for m in self.materials]

    def to_dict(self):
        return {
            "frequency_ghz": self.frequency_ghz,
            "materials": [
                {"label": m.label, "synonyms": list(m.synonyms), "eps_r": m.eps_r,
                 "sigma": m.sigma, "s_range": list(m.s_range), "band_ghz": list(m.band_ghz)}
                for m in self.materials
            ],
        }


def _parse_db(doc, source):
    if not isinstance(doc, dict) or "materials" not in doc:
        raise ValueError(f"{source}: expected a mapping with a 'materials' list")
    out = []
    for rec in doc["materials"]:
        try:
            out.append(RadioMaterial(
                label=str(rec["label"]),
                eps_r=float(rec["eps_r"]),
                sigma=float(rec["sigma"]),
                s_range=tuple(float(x) for x in rec["s_range"]),
                synonyms=tuple(str(s) for s in rec.get("synonyms", ())),
                band_ghz=tuple(float(x) for x in rec.get("band_ghz", (0.0, np.inf))),
            ))
        except KeyError as exc:
            raise ValueError(f"{source}: material record missing {exc}") from None
    return MaterialDatabase(out, doc.get("frequency_ghz"))


def load_material_db(path=None):
    """Load a YAML material database; ``None`` loads the bundled 60.5 GHz table."""
    if path is None:
        text = resources.files("mmtwin").joinpath("data", "materials_60ghz.yaml").read_text()
        return _parse_db(yaml.safe_load(text), "materials_60ghz.yaml")
    with open(path) as fh:
        return _parse_db(yaml.safe_load(fh), str(path))


def save_material_db(db, path):
    with open(path, "w") as fh:
        yaml.safe_dump(db.to_dict(), fh, sort_keys=False)


def complex_permittivity(eps_r, sigma, freq_hz):
    """eta = eps_r - j sigma / (2 pi f eps0), e^{+j w t} convention (Im <= 0)."""
    if np.any(np.asarray(freq_hz) <= 0):
        raise ValueError("frequency must be positive")
    return np.asarray(eps_r) - 1j * np.asarray(sigma) / (2 * np.pi * np.asarray(freq_hz) * EPS0)


@dataclass
class Readout:
    """Fixed read-out vectors w1, w2, w3 stacked as rows of ``W`` (3, L)."""
    W: np.ndarray

    @classmethod
    def random(cls, latent_dim=DEFAULT_LATENT_DIM, seed=0):
        if latent_dim < 3:
            raise ValueError("latent dimension must be >= 3")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((latent_dim, 3)))
        return cls(np.ascontiguousarray(q.T))

    @property
    def latent_dim(self):
        return self.W.shape[1]


def _activations(v, W):
    z = np.asarray(v, float) @ W.T
    return z


def params_from_embedding(v, readout):
    """Map embeddings ``v`` (..., L) to ``(sigma, eps_r, S)`` arrays."""
    W = readout.W if isinstance(readout, Readout) else np.asarray(readout)
    v = np.asarray(v, float)
    if v.shape[-1] != W.shape[1]:
        raise ValueError("embedding and read-out lengths differ")
    z = _activations(v, W)
    sigma = np.exp(np.clip(z[..., 0], -_EXP_CLIP, _EXP_CLIP))
    eps_r = 1.0 + np.exp(np.clip(z[..., 1], -_EXP_CLIP, _EXP_CLIP))
    s = expit(np.clip(z[..., 2], -_LOGIT_CLIP, _LOGIT_CLIP))
    return sigma, eps_r, s


def params_jacobian(v, readout):
    """d(sigma, eps_r, S)/dv, each of shape (..., L)."""
    W = readout.W
    z = _activations(v, W)
    sigma, eps_r, s = params_from_embedding(v, readout)
    live0 = np.abs(z[..., 0]) < _EXP_CLIP
    live1 = np.abs(z[..., 1]) < _EXP_CLIP
    live2 = np.abs(z[..., 2]) < _LOGIT_CLIP
    d_sigma = (sigma * live0)[..., None] * W[0]
    d_eps = ((eps_r - 1.0) * live1)[..., None] * W[1]
    d_s = (s * (1 - s) * live2)[..., None] * W[2]
    return d_sigma, d_eps, d_s


def embedding_from_params(sigma, eps_r, s, readout, eps_margin=1e-9, s_margin=1e-9):
    """Minimum-norm embedding whose read-out reproduces ``(sigma, eps_r, S)``.

    ``eps_r == 1`` and ``S`` in ``{0, 1}`` have no finite pre-image; they are
    moved inside by the given margins with a warning.
    """
    sigma = np.asarray(sigma, float)
    eps_r = np.asarray(eps_r, float)
    s = np.asarray(s, float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be > 0")
    if np.any(eps_r < 1) or np.any((s < 0) | (s > 1)):
        raise ValueError("need eps_r >= 1 and 0 <= S <= 1")
    if np.any(eps_r - 1.0 < eps_margin):
        warnings.warn("eps_r at its lower bound; clamped to 1 + margin", stacklevel=2)
        eps_r = np.maximum(eps_r, 1.0 + eps_margin)
    if np.any((s < s_margin) | (s > 1 - s_margin)):
        warnings.warn("S at a bound; clamped into (0, 1)", stacklevel=2)
        s = np.clip(s, s_margin, 1 - s_margin)
    W = readout.W
    if np.linalg.matrix_rank(W) < 3:
        raise ValueError("read-out vectors must be linearly independent")
    target = np.stack([np.log(sigma), np.log(eps_r - 1.0), logit(s)], axis=-1)
    # v = W^T (W W^T)^{-1} t
    return np.linalg.solve(W @ W.T, target[..., None])[..., 0] @ W


@dataclass
class MaterialEmbedding:
    """Per-region latent vectors (K, L) with their shared read-out."""
    vectors: np.ndarray
    readout: Readout
    labels: list = field(default_factory=list)

    @classmethod
    def from_params(cls, sigma, eps_r, s, readout, labels=None):
        v = embedding_from_params(sigma, eps_r, s, readout)
        return cls(np.atleast_2d(v), readout, list(labels or []))

    @classmethod
    def from_materials(cls, materials, readout):
        sig, eps, s = zip(*(m.params() for m in materials))
        return cls.from_params(np.array(sig), np.array(eps), np.array(s), readout,
                               [m.label for m in materials])

    @property
    def n_regions(self):
        return self.vectors.shape[0]

    def params(self):
        return params_from_embedding(self.vectors, self.readout)

    def copy(self):
        return MaterialEmbedding(self.vectors.copy(), self.readout, list(self.labels))
