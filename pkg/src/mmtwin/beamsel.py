"""Beam selection over MPC sets: sectored codebook, SNR -> MCS -> throughput."""
import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

THERMAL_NOISE_DBM_HZ = -174.0


def _wrap(a):
    """Wrap angles to (-pi, pi]."""
    a = np.mod(np.asarray(a, float) + np.pi, 2 * np.pi) - np.pi
    return np.where(a == -np.pi, np.pi, a)


@dataclass(frozen=True)
class BeamCodebook:
    """Azimuth beams with a flat mainlobe of ``g_max_dbi`` inside half the beamwidth."""
    boresights: np.ndarray          # rad, in (-pi, pi]
    g_max_dbi: float = 15.0
    g_min_dbi: float = -10.0
    beamwidth: float = np.radians(30.0)

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.boresights, float))
        if b.size == 0:
            raise ValueError("codebook needs at least one beam")
        if not self.g_max_dbi > self.g_min_dbi:
            raise ValueError("g_max must exceed g_min")
        if not self.beamwidth > 0:
            raise ValueError("beamwidth must be positive")
        object.__setattr__(self, "boresights", _wrap(b))

    @classmethod
    def uniform(cls, n=8, **kw):
        return cls(2 * np.pi * np.arange(n) / n, **kw)

    def __len__(self):
        return len(self.boresights)

    def gain_db(self, beam, azimuth):
        off = np.abs(_wrap(np.asarray(azimuth, float) - self.boresights[beam]))
        return np.where(off <= self.beamwidth / 2, self.g_max_dbi, self.g_min_dbi)

    def gain_linear(self, beam, azimuth):
        return 10.0 ** (self.gain_db(beam, azimuth) / 10.0)


@dataclass(frozen=True)
class LinkBudget:
    """Transmit power, receiver noise and an MCS table (thresholds in dB, rates in Mbps)."""
    thresholds_db: np.ndarray
    rates_mbps: np.ndarray
    mcs_index: np.ndarray = None
    tx_power_dbm: float = 10.0
    bandwidth_hz: float = 2.16e9
    noise_figure_db: float = 10.0
    mac_efficiency: float = 0.75

    def __post_init__(self):
        th = np.asarray(self.thresholds_db, float)
        r = np.asarray(self.rates_mbps, float)
        if th.shape != r.shape or th.ndim != 1 or th.size == 0:
            raise ValueError("thresholds and rates must be equal-length 1-d arrays")
        if np.any(np.diff(th) <= 0) or np.any(np.diff(r) <= 0):
            raise ValueError("MCS thresholds and rates must both be strictly increasing")
        if not 0 < self.mac_efficiency <= 1:
            raise ValueError("MAC efficiency must lie in (0, 1]")
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth must be positive")
        idx = np.arange(1, th.size + 1) if self.mcs_index is None else np.asarray(self.mcs_index)
        object.__setattr__(self, "thresholds_db", th)
        object.__setattr__(self, "rates_mbps", r)
        object.__setattr__(self, "mcs_index", idx)

    @property
    def noise_dbm(self):
        return THERMAL_NOISE_DBM_HZ + 10 * np.log10(self.bandwidth_hz) + self.noise_figure_db


def load_link_budget(path=None, **override):
    """Read an MCS/link-budget YAML; ``None`` loads the bundled 802.11ad SC table."""
    if path is None:
        doc = yaml.safe_load(resources.files("mmtwin").joinpath("data", "mcs_80211ad.yaml")
                             .read_text())
    else:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    rows = doc["mcs"]
    kw = dict(thresholds_db=[r["threshold_db"] for r in rows],
              rates_mbps=[r["rate_mbps"] for r in rows],
              mcs_index=[r["index"] for r in rows])
    for k in ("tx_power_dbm", "bandwidth_hz", "noise_figure_db", "mac_efficiency"):
        if k in doc:
            kw[k] = float(doc[k])
    kw.update(override)
    return LinkBudget(**kw)


def load_codebook(path=None):
    """Read a codebook YAML; ``None`` loads the bundled 8-beam sectored codebook."""
    if path is None:
        doc = yaml.safe_load(resources.files("mmtwin").joinpath("data", "codebook_sector8.yaml")
                             .read_text())
    else:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    return BeamCodebook(np.radians(np.asarray(doc["boresights_deg"], float)),
                        float(doc["g_max_dbi"]), float(doc["g_min_dbi"]),
                        np.radians(float(doc["beamwidth_deg"])))


def save_codebook(cb, path):
    doc = {"g_max_dbi": float(cb.g_max_dbi), "g_min_dbi": float(cb.g_min_dbi),
           "beamwidth_deg": float(np.degrees(cb.beamwidth)),
           "boresights_deg": [float(x) for x in np.degrees(cb.boresights)]}
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def effective_gain(mpcs, codebook, beam, coherent=True):
    """Linear power gain of the MPC set seen through receive beam ``beam``.

    Coherent mode sums the beam-weighted complex amplitudes; power mode sums
    beam-weighted powers (for measured data without phase).
    """
    if len(mpcs) == 0:
        return 0.0
    a = np.array([m.amplitude for m in mpcs], complex)
    g = codebook.gain_linear(beam, np.array([m.aoa_az for m in mpcs], float))
    if coherent:
        return float(abs(np.sum(a * np.sqrt(g))) ** 2)
    return float(np.sum(np.abs(a) ** 2 * g))


@dataclass(frozen=True)
class RateReport:
    snr_db: float
    mcs: int            # 0 below the lowest threshold
    rate_mbps: float
    throughput_mbps: float


def snr_and_rate(gain_linear, budget):
    with np.errstate(divide="ignore"):
        p_rx = budget.tx_power_dbm + 10 * np.log10(float(gain_linear))
    snr = float(p_rx - budget.noise_dbm)
    k = int(np.searchsorted(budget.thresholds_db, snr, side="right"))
    if k == 0:
        return RateReport(snr, 0, 0.0, 0.0)
    rate = float(budget.rates_mbps[k - 1])
    return RateReport(snr, int(budget.mcs_index[k - 1]), rate, rate * budget.mac_efficiency)


@dataclass(frozen=True)
class BeamChoice:
    beam: int
    report: RateReport
    gains: np.ndarray           # linear gain per beam


def select_beam(mpcs, codebook, budget, coherent=True):
    """Throughput-maximising beam; ties go to the lowest beam index."""
    gains = np.array([effective_gain(mpcs, codebook, b, coherent) for b in range(len(codebook))])
    tput = np.array([snr_and_rate(g, budget).throughput_mbps for g in gains])
    b = int(np.argmax(tput))
    return BeamChoice(b, snr_and_rate(gains[b], budget), gains)


def beam_throughput(mpcs, codebook, budget, beam, coherent=True):
    return snr_and_rate(effective_gain(mpcs, codebook, beam, coherent), budget).throughput_mbps


SELECTION_COLUMNS = ["snapshot", "beam", "boresight_deg", "snr_db", "mcs", "rate_mbps",
                     "throughput_mbps"]


def write_selection_csv(path, ids, choices, codebook):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SELECTION_COLUMNS)
        for i, c in zip(ids, choices):
            r = c.report
            w.writerow([str(i), c.beam, repr(float(np.degrees(codebook.boresights[c.beam]))),
                        repr(r.snr_db), r.mcs, repr(r.rate_mbps), repr(r.throughput_mbps)])
