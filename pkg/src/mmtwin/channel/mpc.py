"""Multipath components, tapped impulse responses and the global amplitude scale."""
import csv
from dataclasses import dataclass, replace
import warnings

import numpy as np

from ..materials import C0, MaterialEmbedding
from .batch import CODE_KIND, compile_paths, forward

DEFAULT_SAMPLE_RATE = 2e9
DEFAULT_N_TAPS = 1024


@dataclass(frozen=True)
class MultipathComponent:
    delay: float            # s
    aod_az: float           # rad
    aod_el: float
    aoa_az: float
    aoa_el: float
    amplitude: complex      # linear field units
    kind: str = "specular"

    def __post_init__(self):
        if not self.delay >= 0:
            raise ValueError("delay must be non-negative")

    @property
    def power(self):
        return float(abs(self.amplitude) ** 2)

    def scaled(self, s):
        return replace(self, amplitude=self.amplitude * s)


@dataclass
class ChannelImpulseResponse:
    taps: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        self.taps = np.asarray(self.taps, complex)
        if self.taps.ndim != 1 or len(self.taps) < 1:
            raise ValueError("need at least one tap")
        if not self.sample_rate > 0:
            raise ValueError("sample rate must be positive")

    @property
    def n_taps(self):
        return len(self.taps)


@dataclass
class ScaleState:
    scale: float = 1.0
    beta: float = 0.9

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("EMA decay must be in [0, 1)")


def resolve_materials(materials):
    """Accept an embedding, a (sigma, eps_r, S) triple, or a {region: triple} dict."""
    if isinstance(materials, MaterialEmbedding):
        return materials.params()
    if isinstance(materials, dict):
        k = max(materials) + 1
        out = np.full((3, k), np.nan)
        for r, trip in materials.items():
            out[:, r] = trip
        return out[0], out[1], out[2]
    sig, eps, s = (np.atleast_1d(np.asarray(x, float)) for x in materials)
    return sig, eps, s


def tap_index(delay, sample_rate):
    """Nearest tap, ties rounding up (floor(x + 1/2))."""
    return np.floor(np.asarray(delay) * sample_rate + 0.5).astype(np.int64)


def bin_taps(delay, amplitude, sample_rate, n_taps, group=None, n_groups=1):
    """Accumulate complex amplitudes into taps; returns (taps (G, T), kept mask)."""
    idx = tap_index(delay, sample_rate)
    keep = (idx >= 0) & (idx < n_taps)
    g = np.zeros(len(idx), np.int64) if group is None else np.asarray(group)
    flat = g * n_taps + idx
    taps = np.zeros(n_groups * n_taps, complex)
    np.add.at(taps, flat[keep], np.asarray(amplitude)[keep])
    return taps.reshape(n_groups, n_taps), keep


def mpcs_from_batch(batch, amplitude):
    out = []
    delay = batch.delay
    for i in range(batch.n_paths):
        out.append(MultipathComponent(float(delay[i]), float(batch.aod[i, 0]),
                                      float(batch.aod[i, 1]), float(batch.aoa[i, 0]),
                                      float(batch.aoa[i, 1]), complex(amplitude[i]),
                                      CODE_KIND[int(batch.kind[i])].value))
    return out


def path_gain(path, materials, freq):
    """(complex amplitude, delay s, (AoD az, el), (AoA az, el)) of one path."""
    if not freq > 0:
        raise ValueError("frequency must be positive")
    batch = compile_paths([[path]], [freq])
    amp = forward(batch, *resolve_materials(materials))
    return (complex(amp[0]), float(batch.delay[0]), tuple(batch.aod[0]), tuple(batch.aoa[0]))


def cir_from_mpcs(mpcs, sample_rate=DEFAULT_SAMPLE_RATE, n_taps=DEFAULT_N_TAPS):
    delay = np.array([m.delay for m in mpcs])
    amp = np.array([m.amplitude for m in mpcs], complex)
    taps, keep = bin_taps(delay, amp, sample_rate, n_taps)
    if not np.all(keep):
        warnings.warn(f"{int((~keep).sum())} component(s) beyond the last tap dropped",
                      stacklevel=2)
    return ChannelImpulseResponse(taps[0], sample_rate)


def synthesize(paths, materials, freq, scale_state=None, sample_rate=None,
               n_taps=DEFAULT_N_TAPS):
    """MPC list for one path set and, if ``sample_rate`` is given, its CIR."""
    scale = 1.0 if scale_state is None else scale_state.scale
    batch = paths if hasattr(paths, "base") else compile_paths([paths], [freq])
    if np.any(batch.delay < 0):
        raise ValueError("negative delay")
    amp = forward(batch, *resolve_materials(materials)) * scale
    mpcs = mpcs_from_batch(batch, amp)
    if sample_rate is None:
        return mpcs, None
    return mpcs, cir_from_mpcs(mpcs, sample_rate, n_taps)


def instantaneous_scale(pred_los_power, meas_los_power):
    pred = float(np.mean(pred_los_power))
    meas = float(np.mean(meas_los_power))
    if not pred > 0:
        raise ValueError("zero predicted LoS power")
    return np.sqrt(meas / pred)


def calibrate_scale(pred_los, meas_los, state):
    """EMA update of the amplitude scale from matched LoS powers (or MPCs)."""
    def powers(x):
        return np.array([m.power if isinstance(m, MultipathComponent) else float(m)
                         for m in np.atleast_1d(np.asarray(x, dtype=object))], float)
    p, m = powers(pred_los), powers(meas_los)
    if len(p) == 0 or len(p) != len(m):
        raise ValueError("need at least one matched LoS pair")
    s_star = instantaneous_scale(p, m)
    return ScaleState(state.beta * state.scale + (1 - state.beta) * s_star, state.beta)


# -- CSV ---------------------------------------------------------------------------
MPC_COLUMNS = ["delay_ns", "aod_az_deg", "aod_el_deg", "aoa_az_deg", "aoa_el_deg",
               "pathloss_db", "kind", "phase_deg"]


def _num(x):
    return repr(float(x))


def mpc_row(m):
    p = m.power
    pl = -10 * np.log10(p) if p > 0 else np.inf
    return [_num(m.delay * 1e9), _num(np.degrees(m.aod_az)), _num(np.degrees(m.aod_el)),
            _num(np.degrees(m.aoa_az)), _num(np.degrees(m.aoa_el)), _num(pl), m.kind,
            _num(np.degrees(np.angle(m.amplitude)))]


def write_mpc_csv(path_or_fh, mpcs, extra=None):
    """Write MPCs; ``extra`` is an optional list of (name, values) leading columns."""
    extra = extra or []
    own = isinstance(path_or_fh, str) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([n for n, _ in extra] + MPC_COLUMNS)
        for i, m in enumerate(mpcs):
            w.writerow([str(v[i]) for _, v in extra] + mpc_row(m))
    finally:
        if own:
            fh.close()


def mpc_from_row(row):
    pl = float(row["pathloss_db"])
    mag = 10 ** (-pl / 20) if np.isfinite(pl) else 0.0
    ph = np.radians(float(row.get("phase_deg") or 0.0))
    return MultipathComponent(float(row["delay_ns"]) * 1e-9,
                              np.radians(float(row["aod_az_deg"])),
                              np.radians(float(row["aod_el_deg"])),
                              np.radians(float(row["aoa_az_deg"])),
                              np.radians(float(row["aoa_el_deg"])),
                              mag * np.exp(1j * ph), row.get("kind") or "specular")


def read_mpc_csv(path, group_by=None):
    """Read MPCs; with ``group_by`` returns {value: [MPC, ...]} in file order."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = set(MPC_COLUMNS[:6]) - set(rows[0] if rows else MPC_COLUMNS)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    if group_by is None:
        return [mpc_from_row(r) for r in rows]
    out = {}
    for r in rows:
        out.setdefault(r[group_by], []).append(mpc_from_row(r))
    return out
