"""Frozen-geometry path batches with a vectorised forward pass and its adjoint.

A :class:`PathBatch` stores everything about a set of paths that does not
depend on materials (bounce frames, incidence cosines, spreading and phase).
The forward pass maps per-region (sigma, eps_r, S) to complex amplitudes; the
adjoint maps a cotangent on those amplitudes back to per-region parameter
gradients. Many snapshots can share one batch, tagged by ``snap``.

Field model for specular chains: the transmitter radiates a unit field polarised
along the vertical projected transverse to the departure direction. At each
bounce the field is split on the local TE/TM basis::

    M = R * (G_TE s s^T + G_TM p_out p_in^T),   R = sqrt(1 - S^2)

with s = k_in x n (normalised), p_in = s x k_in, p_out = s x k_out. The receiver
is an ideal dual-polarised probe: the magnitude of the received amplitude is the
field norm and its phase is taken from the projection onto the receiver's
vertical reference.
"""
from dataclasses import dataclass

import numpy as np

from ..materials import C0, EPS0
from ..tracer.paths import PathKind
from .em import fresnel_cos, fresnel_deta, mean_reflectivity

KIND_CODE = {PathKind.LOS: 0, PathKind.SPECULAR: 1, PathKind.SCATTERED: 2}
CODE_KIND = {v: k for k, v in KIND_CODE.items()}
AEFF_CAP_WAVELENGTHS = 10.0
_Z = np.array([0.0, 0.0, 1.0])
_X = np.array([1.0, 0.0, 0.0])


def transverse_reference(k, up=_Z, fallback=_X):
    """Unit vector along ``up`` projected orthogonal to propagation ``k`` (..., 3)."""
    k = np.asarray(k, float)
    e = up - (k @ up)[..., None] * k
    nrm = np.linalg.norm(e, axis=-1)
    bad = nrm < 1e-9
    if np.any(bad):
        alt = fallback - (k @ fallback)[..., None] * k
        e = np.where(bad[..., None], alt, e)
        nrm = np.linalg.norm(e, axis=-1)
    return e / nrm[..., None]


def direction_angles(v):
    """(azimuth, elevation) of vectors ``v`` with azimuth in (-pi, pi]."""
    v = np.asarray(v, float)
    r = np.linalg.norm(v, axis=-1)
    az = np.arctan2(v[..., 1], v[..., 0])
    az = np.where(az <= -np.pi, np.pi, az)
    el = np.arcsin(np.clip(v[..., 2] / r, -1.0, 1.0))
    return az, el


@dataclass
class PathBatch:
    snap: np.ndarray        # (N,) snapshot index
    kind: np.ndarray        # (N,) 0 LoS, 1 specular, 2 scattered
    freq: np.ndarray        # (N,) carrier (Hz)
    length: np.ndarray      # (N,) m
    aod: np.ndarray         # (N, 2) rad
    aoa: np.ndarray         # (N, 2) rad
    region: np.ndarray      # (N, D) region per interaction, -1 padding
    cos_i: np.ndarray       # (N, D)
    s_vec: np.ndarray       # (N, D, 3)
    p_in: np.ndarray        # (N, D, 3)
    p_out: np.ndarray       # (N, D, 3)
    e_tx: np.ndarray        # (N, 3) launch field
    e_rx: np.ndarray        # (N, 3) receiver reference
    base: np.ndarray        # (N,) complex, material-free factor
    keys: list              # path keys for reporting
    n_snapshots: int = 1

    @property
    def n_paths(self):
        return len(self.kind)

    @property
    def delay(self):
        return self.length / C0

    @property
    def max_depth(self):
        return self.region.shape[1]

    def regions_touched(self, n_regions):
        r = self.region[self.region >= 0]
        return np.bincount(r, minlength=n_regions)


def _bounce_frames(k_in, n, k_out):
    s = np.cross(k_in, n)
    nrm = np.linalg.norm(s, axis=-1)
    bad = nrm < 1e-12
    if np.any(bad):
        # normal incidence: any transverse s gives the same operator
        alt = np.cross(k_in, np.where(np.abs(k_in[..., :1]) < 0.9, _X, np.array([0.0, 1.0, 0.0])))
        s = np.where(bad[..., None], alt, s)
        nrm = np.linalg.norm(s, axis=-1)
    s = s / nrm[..., None]
    return s, np.cross(s, k_in), np.cross(s, k_out)


def compile_paths(results, freqs, max_depth=None):
    """Pack traced path sets (one per snapshot) into a :class:`PathBatch`."""
    if not isinstance(results, (list, tuple)):
        results = [results]
    freqs = np.broadcast_to(np.asarray(freqs, float), (len(results),))
    if np.any(freqs <= 0):
        raise ValueError("frequency must be positive")
    paths = [(i, p) for i, r in enumerate(results) for p in r]
    n = len(paths)
    D = max([p.depth for _, p in paths] + [1]) if max_depth is None else max_depth
    snap = np.array([i for i, _ in paths], np.int64)
    kind = np.array([KIND_CODE[p.kind] for _, p in paths], np.int64)
    freq = freqs[snap] if n else np.zeros(0)
    region = np.full((n, D), -1, np.int64)
    cos_i = np.ones((n, D))
    s_vec = np.zeros((n, D, 3))
    p_in = np.zeros((n, D, 3))
    p_out = np.zeros((n, D, 3))
    e_tx = np.zeros((n, 3))
    e_rx = np.zeros((n, 3))
    base = np.zeros(n, complex)
    length = np.zeros(n)
    aod = np.zeros((n, 2))
    aoa = np.zeros((n, 2))
    lam = C0 / freq if n else np.zeros(0)

    # group by depth so frames are computed in vectorised chunks
    depth = np.array([p.depth for _, p in paths], np.int64)
    for d in np.unique(depth) if n else []:
        idx = np.flatnonzero(depth == d)
        verts = np.stack([paths[i][1].vertices for i in idx])       # (m, d+2, 3)
        seg = np.diff(verts, axis=1)
        seg_len = np.linalg.norm(seg, axis=-1)
        k = seg / seg_len[..., None]
        length[idx] = seg_len.sum(1)
        aod[idx] = np.stack(direction_angles(k[:, 0]), 1)
        aoa[idx] = np.stack(direction_angles(-k[:, -1]), 1)
        e_tx[idx] = transverse_reference(k[:, 0])
        e_rx[idx] = transverse_reference(k[:, -1])
        if d == 0:
            continue
        nrm = np.stack([[it.normal for it in paths[i][1].interactions] for i in idx])
        reg = np.array([[it.region for it in paths[i][1].interactions] for i in idx])
        region[idx, :d] = reg
        ci = -np.einsum("mjk,mjk->mj", k[:, :-1], nrm)
        cos_i[idx, :d] = np.clip(ci, 0.0, 1.0)
        s, pi_, po = _bounce_frames(k[:, :-1], nrm, k[:, 1:])
        s_vec[idx, :d] = s
        p_in[idx, :d] = pi_
        p_out[idx, :d] = po

    phase = np.exp(-2j * np.pi * freq * length / C0) if n else np.zeros(0, complex)
    spec = kind < 2
    base[spec] = lam[spec] / (4 * np.pi * length[spec]) * phase[spec]
    for i in np.flatnonzero(kind == 2):
        p = paths[i][1]
        v = p.vertices
        r1, r2 = np.linalg.norm(v[1] - v[0]), np.linalg.norm(v[2] - v[1])
        it = p.interactions[0]
        k_s = (v[2] - v[1]) / r2
        cos_s = max(float(k_s @ it.normal), 0.0)
        if not np.isfinite(it.area):
            raise ValueError("scatter interaction carries no patch area")
        a_eff = min(it.area, (AEFF_CAP_WAVELENGTHS * lam[i]) ** 2)
        base[i] = (lam[i] / (4 * np.pi * r1 * r2) * np.sqrt(cos_s / np.pi) * np.sqrt(a_eff)
                   * phase[i])
    keys = [(int(snap[i]),) + tuple(p.key) for i, (_, p) in enumerate(paths)]
    return PathBatch(snap, kind, freq, length, aod, aoa, region, cos_i, s_vec, p_in, p_out,
                     e_tx, e_rx, base, keys, len(results))


@dataclass
class _Cache:
    eta: np.ndarray
    g_te: np.ndarray
    g_tm: np.ndarray
    refl: np.ndarray
    fields: np.ndarray      # (N, D+1, 3) complex, field after each bounce
    gamma: np.ndarray       # (N,) complex receiver factor
    u: np.ndarray


def _gather(values, region):
    return values[np.maximum(region, 0)]


def forward(batch, sigma, eps_r, s_coef, keep=False):
    """Unscaled complex amplitudes (N,) given per-region parameter arrays."""
    sigma = np.asarray(sigma, float)
    eps_r = np.asarray(eps_r, float)
    s_coef = np.asarray(s_coef, float)
    if batch.n_paths and batch.region.max(initial=-1) >= len(sigma):
        raise KeyError(f"unknown region id {int(batch.region.max())}")
    N, D = batch.region.shape
    reg = batch.region
    live = reg >= 0
    f = batch.freq[:, None]
    eta = _gather(eps_r, reg) - 1j * _gather(sigma, reg) / (2 * np.pi * f * EPS0)
    g_te, g_tm = fresnel_cos(batch.cos_i, eta)
    S = _gather(s_coef, reg)
    refl = np.sqrt(np.maximum(1.0 - S * S, 0.0))

    fields = np.zeros((N, D + 1, 3), complex)
    E = batch.e_tx.astype(complex)
    fields[:, 0] = E
    spec = batch.kind < 2
    for j in range(D):
        act = live[:, j] & spec
        if np.any(act):
            s = batch.s_vec[:, j]
            es = np.einsum("nk,nk->n", s, E)
            ep = np.einsum("nk,nk->n", batch.p_in[:, j], E)
            newE = refl[:, j, None] * ((g_te[:, j] * es)[:, None] * s
                                       + (g_tm[:, j] * ep)[:, None] * batch.p_out[:, j])
            E = np.where(act[:, None], newE, E)
        fields[:, j + 1] = E
    norm_e = np.linalg.norm(E, axis=1)
    u = np.einsum("nk,nk->n", batch.e_rx, E)
    absu = np.abs(u)
    ph = np.where(absu > 1e-300, u / np.where(absu > 0, absu, 1.0), 1.0)
    gamma = norm_e * ph

    amp = batch.base * gamma
    scat = batch.kind == 2
    if np.any(scat):
        gbar = mean_reflectivity(g_te[scat, 0], g_tm[scat, 0])
        amp[scat] = batch.base[scat] * S[scat, 0] * gbar
    if keep:
        return amp, _Cache(eta, g_te, g_tm, refl, fields, gamma, u)
    return amp


def backward(batch, sigma, eps_r, s_coef, cache, cot):
    """Gradients of ``sum Re(cot * amp)`` w.r.t. per-region sigma, eps_r and S."""
    K = len(sigma)
    N, D = batch.region.shape
    reg = batch.region
    live = reg >= 0
    g_sig = np.zeros(K)
    g_eps = np.zeros(K)
    g_s = np.zeros(K)
    if N == 0:
        return g_sig, g_eps, g_s
    s_coef = np.asarray(s_coef, float)
    S = _gather(s_coef, reg)
    kappa = -1j / (2 * np.pi * batch.freq * EPS0)
    d_te, d_tm = fresnel_deta(batch.cos_i, cache.eta)

    spec = batch.kind < 2
    # receiver adjoint: Re(c' * gamma(E)) -> Re(G^H dE)
    c = cot * batch.base
    E = cache.fields[:, D]
    nE = np.linalg.norm(E, axis=1)
    u = cache.u
    au = np.abs(u)
    ok = spec & (au > 1e-300) & (nE > 0)
    au_s = np.where(ok, au, 1.0)
    nE_s = np.where(ok, nE, 1.0)
    alpha = np.real(c * u / au_s) / nE_s
    beta = nE / au_s
    beta2 = nE * np.real(c * u) / au_s ** 3
    G = (alpha[:, None] * E + (beta * np.conj(c))[:, None] * batch.e_rx
         - (beta2 * u)[:, None] * batch.e_rx)
    G = np.where(ok[:, None], G, 0.0)
    lam = G
    for j in range(D - 1, -1, -1):
        act = live[:, j] & ok
        if not np.any(act):
            continue
        F = cache.fields[:, j]
        s = batch.s_vec[:, j]
        pin = batch.p_in[:, j]
        pout = batch.p_out[:, j]
        R = cache.refl[:, j]
        ls = np.einsum("nk,nk->n", np.conj(lam), s)
        lp = np.einsum("nk,nk->n", np.conj(lam), pout)
        sF = np.einsum("nk,nk->n", s, F)
        pF = np.einsum("nk,nk->n", pin, F)
        A = R * (d_te[:, j] * ls * sF + d_tm[:, j] * lp * pF)
        w = act.astype(float)
        r = np.maximum(reg[:, j], 0)
        g_eps += np.bincount(r, w * np.real(A), minlength=K)
        g_sig += np.bincount(r, w * np.real(kappa * A), minlength=K)
        Ej = cache.fields[:, j + 1]
        lE = np.real(np.einsum("nk,nk->n", np.conj(lam), Ej))
        Sj = S[:, j]
        dS = -Sj / np.maximum(1.0 - Sj * Sj, 1e-300)
        g_s += np.bincount(r, w * lE * dS, minlength=K)
        # lambda_{j-1} = M_j^H lambda_j
        mh = R[:, None] * ((np.conj(cache.g_te[:, j] * ls))[:, None] * s
                           + (np.conj(cache.g_tm[:, j] * lp))[:, None] * pin)
        lam = np.where(act[:, None], mh, lam)

    scat = np.flatnonzero(batch.kind == 2)
    if len(scat):
        gte = cache.g_te[scat, 0]
        gtm = cache.g_tm[scat, 0]
        gbar = mean_reflectivity(gte, gtm)
        Ss = S[scat, 0]
        cb = np.real(cot[scat] * batch.base[scat])
        r = reg[scat, 0]
        g_s += np.bincount(r, cb * gbar, minlength=K)
        # d gbar / d eta-direction: (Re(conj(G_TE) G_TE' x) + Re(conj(G_TM) G_TM' x)) / (2 gbar)
        dte = d_te[scat, 0]
        dtm = d_tm[scat, 0]
        inv = np.where(gbar > 0, 1.0 / (2.0 * np.where(gbar > 0, gbar, 1.0)), 0.0)
        de = np.real(np.conj(gte) * dte + np.conj(gtm) * dtm) * inv
        ks = kappa[scat]
        dsg = np.real(np.conj(gte) * dte * ks + np.conj(gtm) * dtm * ks) * inv
        g_eps += np.bincount(r, cb * Ss * de, minlength=K)
        g_sig += np.bincount(r, cb * Ss * dsg, minlength=K)
    return g_sig, g_eps, g_s
