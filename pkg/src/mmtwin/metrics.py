"""Snapshot metrics, tap-domain features, shadow loss and MPC cluster matching."""
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class SnapshotMetrics:
    pathloss_db: float
    rms_delay_spread: float         # s
    angular_spread: float           # rad
    k_factor_db: float = None       # None when no LoS component is tagged

    @property
    def angular_spread_deg(self):
        return float(np.degrees(self.angular_spread))

    def row(self):
        k = "" if self.k_factor_db is None else repr(float(self.k_factor_db))
        return [repr(float(self.pathloss_db)), repr(self.rms_delay_spread * 1e9),
                repr(self.angular_spread_deg), k]


METRIC_COLUMNS = ["pathloss_db", "rms_delay_spread_ns", "angular_spread_deg", "k_factor_db"]


def _arrays(mpcs, side):
    p = np.array([m.power for m in mpcs], float)
    tau = np.array([m.delay for m in mpcs], float)
    phi = np.array([m.aoa_az if side == "aoa" else m.aod_az for m in mpcs], float)
    return p, tau, phi


def metrics_from_arrays(power, delay, azimuth, los_index=None):
    power = np.asarray(power, float)
    total = power.sum()
    if not total > 0:
        raise ValueError("total power must be positive")
    delay = np.asarray(delay, float)
    pl = -10 * np.log10(total)
    w = power / total
    m1 = w @ delay
    # centred form: same quantity as E[t^2] - E[t]^2, without the cancellation
    var = w @ (delay - m1) ** 2
    tau_rms = float(np.sqrt(max(var, 0.0)))
    phi = np.asarray(azimuth, float)
    # 1 - r summed about the mean direction: r = sum w cos(phi - mu) exactly, and
    # the half-angle form keeps full relative precision when the spread is tiny
    mu = np.angle(w @ np.exp(1j * phi))
    one_minus_r = min(float(w @ (2.0 * np.sin(0.5 * (phi - mu)) ** 2)), 1.0)
    as_ = float(np.sqrt(max(-2.0 * np.log1p(-one_minus_r), 0.0)))
    k = None
    if los_index is not None:
        rest = np.delete(power, los_index).sum()
        k = float(10 * np.log10(power[los_index] / rest)) if rest > 0 else float(np.inf)
    return SnapshotMetrics(float(pl), tau_rms, as_, k)


def snapshot_metrics(mpcs, los_index=None, side="aoa"):
    """Path loss, RMS delay spread, azimuth spread and K-factor of one MPC set.

    ``los_index`` selects the LoS component for the K-factor; ``side`` picks the
    azimuth used for the angular spread ("aoa" or "aod").
    """
    if side not in ("aoa", "aod"):
        raise ValueError("side must be 'aoa' or 'aod'")
    if len(mpcs) == 0:
        raise ValueError("no components")
    return metrics_from_arrays(*_arrays(mpcs, side), los_index=los_index)


def los_index_of(mpcs):
    for i, m in enumerate(mpcs):
        if m.kind == "los":
            return i
    return None


def tap_moments(power_taps):
    """(P, mean tap, variance in taps^2) along the last axis of |h|^2 arrays."""
    w = np.asarray(power_taps, float)
    ell = np.arange(w.shape[-1], dtype=float)
    P = w.sum(-1)
    safe = np.where(P > 0, P, 1.0)
    m = (w * ell).sum(-1) / safe
    var = (w * (ell - m[..., None]) ** 2).sum(-1) / safe
    return P, m, np.maximum(var, 0.0)


def tap_features(cir):
    """(received power, delay spread in seconds) of a tapped impulse response."""
    if not cir.sample_rate > 0:
        raise ValueError("sample rate must be positive")
    P, _, var = tap_moments(np.abs(cir.taps) ** 2)
    if not P > 0:
        raise ValueError("impulse response carries no power")
    return float(P), float(np.sqrt(var) / cir.sample_rate)


def shadow_loss(e_los, e_rx):
    """20 log10(|E_LoS| / |E_Rx|); positive when the link is attenuated."""
    a, b = np.abs(e_los), np.abs(e_rx)
    if np.any(a == 0) or np.any(b == 0):
        raise ValueError("zero field magnitude")
    return 20 * np.log10(a / b)


def _angle_between(az1, el1, az2, el2):
    c = (np.sin(el1) * np.sin(el2) + np.cos(el1) * np.cos(el2) * np.cos(az1 - az2))
    return np.arccos(np.clip(c, -1.0, 1.0))


@dataclass
class ClusterMatchReport:
    pairs: list                     # (pred index, meas index)
    delay_error: np.ndarray         # s, pred - meas
    angle_error: np.ndarray         # rad, great-circle AoA separation
    power_error_db: np.ndarray      # dB, pred - meas
    misses: int
    false_alarms: int
    cost: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_matched(self):
        return len(self.pairs)

    def rows(self):
        return [[str(i), str(j), repr(float(dt) * 1e9), repr(float(np.degrees(da))),
                 repr(float(dp))]
                for (i, j), dt, da, dp in zip(self.pairs, self.delay_error, self.angle_error,
                                              self.power_error_db)]


CLUSTER_COLUMNS = ["pred_index", "meas_index", "delay_error_ns", "angle_error_deg",
                   "power_error_db"]


def cluster_costs(pred, meas, gate_delay=5e-9, gate_angle=np.radians(10.0)):
    """Normalised delay+angle cost matrix and the admissibility mask."""
    if not (gate_delay > 0 and gate_angle > 0):
        raise ValueError("gates must be positive")
    td = np.array([m.delay for m in pred])[:, None] - np.array([m.delay for m in meas])[None]
    ang = _angle_between(np.array([m.aoa_az for m in pred])[:, None],
                         np.array([m.aoa_el for m in pred])[:, None],
                         np.array([m.aoa_az for m in meas])[None],
                         np.array([m.aoa_el for m in meas])[None])
    ok = (np.abs(td) <= gate_delay) & (ang <= gate_angle)
    cost = np.abs(td) / gate_delay + ang / gate_angle
    return cost.reshape(len(pred), len(meas)), ok.reshape(len(pred), len(meas)), td, ang


def cluster_match(pred, meas, gate_delay=5e-9, gate_angle=np.radians(10.0)):
    """One-to-one gated assignment of predicted to measured MPCs.

    Among admissible pairs (inside both gates) the assignment first maximises
    the number of matches, then minimises the summed normalised cost.
    """
    n, m = len(pred), len(meas)
    if n == 0 or m == 0:
        return ClusterMatchReport([], np.zeros(0), np.zeros(0), np.zeros(0), m, n)
    cost, ok, td, ang = cluster_costs(pred, meas, gate_delay, gate_angle)
    # each admissible pair earns a bonus larger than any total cost, so the
    # cardinality term dominates; inadmissible pairs are never worth taking
    big = 2.0 * min(n, m) + 1.0
    score = np.where(ok, cost - big, 0.0)
    rows, cols = linear_sum_assignment(score)
    sel = ok[rows, cols]
    rows, cols = rows[sel], cols[sel]
    pp = np.array([pred[i].power for i in rows])
    pm = np.array([meas[j].power for j in cols])
    with np.errstate(divide="ignore"):
        dp = 10 * np.log10(pp) - 10 * np.log10(pm)
    return ClusterMatchReport(list(zip(rows.tolist(), cols.tolist())), td[rows, cols],
                              ang[rows, cols], dp, m - len(rows), n - len(rows),
                              float(cost[rows, cols].sum()))


def write_metrics_csv(path, ids, metrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["snapshot"] + METRIC_COLUMNS)
        for i, m in zip(ids, metrics):
            w.writerow([str(i)] + m.row())


def read_metrics_csv(path):
    out = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            k = r["k_factor_db"]
            out[r["snapshot"]] = SnapshotMetrics(float(r["pathloss_db"]),
                                                 float(r["rms_delay_spread_ns"]) * 1e-9,
                                                 np.radians(float(r["angular_spread_deg"])),
                                                 float(k) if k else None)
    return out
