"""Few-shot calibration of material embeddings against measured soundings.

The loss compares received power and delay spread of predicted and measured
impulse responses with a symmetric relative error::

    L = mean_b [ lam_p |P - P_hat| / (P + P_hat) + lam_tau |tau - tau_hat| / (tau + tau_hat) ]

Gradients are exact for frozen path geometry and are propagated by hand through
tap binning, the per-path field model and the embedding read-out.
"""
import csv
from dataclasses import dataclass, field
import logging

import numpy as np

from .channel import (DEFAULT_N_TAPS, DEFAULT_SAMPLE_RATE, ScaleState, backward, bin_taps,
                      cir_from_mpcs, compile_paths, forward, instantaneous_scale, synthesize)
from .materials import MaterialEmbedding, params_jacobian
from .metrics import tap_features, tap_moments
from .tracer import TraceConfig, trace_paths

log = logging.getLogger(__name__)


class CalibrationDiverged(RuntimeError):
    """Raised when the loss or gradient stops being finite."""


@dataclass
class Snapshot:
    tx: np.ndarray
    rx: np.ndarray
    freq: float
    mpcs: list
    los_index: int = None
    ident: str = ""

    def __post_init__(self):
        self.tx = np.asarray(self.tx, float)
        self.rx = np.asarray(self.rx, float)
        if not self.freq > 0:
            raise ValueError("carrier frequency must be positive")
        if len(self.mpcs) < 1:
            raise ValueError("snapshot needs at least one MPC")


@dataclass
class CalibrationConfig:
    lambda_p: float = 1.0
    lambda_tau: float = 1.0
    batch_size: int = None          # None: every snapshot each iteration
    lr: float = 1e-2
    max_iter: int = 300
    retrace_period: int = 25
    ema_beta: float = 0.9
    tol: float = 1e-6
    optimizer: str = "adam"
    lr_schedule: str = "constant"   # or "cosine": decays lr to lr_min at max_iter
    lr_min: float = 0.0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    sample_rate: float = DEFAULT_SAMPLE_RATE
    n_taps: int = DEFAULT_N_TAPS
    seed: int = 0

    def __post_init__(self):
        if self.lambda_p < 0 or self.lambda_tau < 0 or self.lambda_p + self.lambda_tau == 0:
            raise ValueError("loss weights must be >= 0 and not both zero")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")

    def lr_at(self, it):
        if self.lr_schedule == "constant" or self.max_iter <= 0:
            return self.lr
        frac = min(it / self.max_iter, 1.0)
        return self.lr_min + 0.5 * (self.lr - self.lr_min) * (1 + np.cos(np.pi * frac))


# -- loss -----------------------------------------------------------------------------
def _smape_terms(x, ref):
    """|ref - x| / (ref + x) and its derivative in x; both 0 where ref + x == 0."""
    x = np.asarray(x, float)
    ref = np.asarray(ref, float)
    den = ref + x
    safe = np.where(den > 0, den, 1.0)
    val = np.where(den > 0, np.abs(ref - x) / safe, 0.0)
    with np.errstate(over="ignore"):
        der = np.where(den > 0, np.sign(x - ref) * 2.0 * (ref / safe) / safe, 0.0)
    return val, der


def smape_loss(pred_p, pred_tau, meas_p, meas_tau, lambda_p=1.0, lambda_tau=1.0):
    """Batch-averaged weighted SMAPE over (power, delay spread) pairs."""
    pred_p, meas_p = np.atleast_1d(pred_p), np.atleast_1d(meas_p)
    if np.any(pred_p <= 0) or np.any(meas_p <= 0):
        raise ValueError("powers must be positive")
    tp, _ = _smape_terms(pred_p, meas_p)
    tt, _ = _smape_terms(np.atleast_1d(pred_tau), np.atleast_1d(meas_tau))
    return float(np.mean(lambda_p * tp + lambda_tau * tt))


def measured_features(snapshots, sample_rate=DEFAULT_SAMPLE_RATE, n_taps=DEFAULT_N_TAPS):
    """(P, tau) per snapshot from the measured MPCs rendered at ``sample_rate``."""
    feats = [tap_features(cir_from_mpcs(s.mpcs, sample_rate, n_taps)) for s in snapshots]
    return np.array([f[0] for f in feats]), np.array([f[1] for f in feats])


@dataclass
class Evaluation:
    loss: float
    pred_p: np.ndarray
    pred_tau: np.ndarray
    grad_v: np.ndarray = None       # (K, L)
    grad_params: tuple = None       # per-region (d sigma, d eps_r, d S)
    grad_scale: float = None


def evaluate(batch, embedding, scale, meas_p, meas_tau, config, snaps=None, grad=True):
    """Loss on the snapshots of ``batch`` (optionally a subset ``snaps``) and its gradient."""
    G = batch.n_snapshots
    snaps = np.arange(G) if snaps is None else np.asarray(snaps)
    sel = np.isin(batch.snap, snaps)
    sigma, eps_r, s_coef = embedding.params()
    amp, cache = forward(batch, sigma, eps_r, s_coef, keep=True)
    h, keep = bin_taps(batch.delay, amp * scale, config.sample_rate, config.n_taps,
                       batch.snap, G)
    w = np.abs(h) ** 2
    P, mean, var = tap_moments(w)
    W = config.sample_rate
    tau = np.sqrt(var) / W
    B = len(snaps)
    if np.any(P[snaps] <= 0):
        raise ValueError("a predicted snapshot carries no power")
    vp, dp = _smape_terms(P[snaps], meas_p[snaps])
    vt, dt = _smape_terms(tau[snaps], meas_tau[snaps])
    loss = float(np.mean(config.lambda_p * vp + config.lambda_tau * vt))
    if not grad:
        return Evaluation(loss, P, tau)

    # dL/dw per tap, only for the snapshots in the batch
    ell = np.arange(config.n_taps, dtype=float)
    dLdw = np.zeros_like(w)
    t = tau[snaps]
    tsafe = np.where(t > 0, t, 1.0)
    dtau_dw = (((ell[None] - mean[snaps, None]) ** 2 - var[snaps, None])
               / (P[snaps, None] * 2 * W * W * tsafe[:, None]))
    dtau_dw = np.where((t > 0)[:, None], dtau_dw, 0.0)
    dLdw[snaps] = (config.lambda_p * dp[:, None]
                   + config.lambda_tau * dt[:, None] * dtau_dw) / B

    tap = np.floor(batch.delay * W + 0.5).astype(np.int64)
    tap_c = np.clip(tap, 0, config.n_taps - 1)
    cot = 2.0 * scale * dLdw[batch.snap, tap_c] * np.conj(h[batch.snap, tap_c])
    cot = np.where(keep & sel, cot, 0.0)
    g_sig, g_eps, g_s = backward(batch, sigma, eps_r, s_coef, cache, cot)
    d_sig, d_eps, d_s = params_jacobian(embedding.vectors, embedding.readout)
    grad_v = g_sig[:, None] * d_sig + g_eps[:, None] * d_eps + g_s[:, None] * d_s
    grad_scale = float((dLdw * 2.0 * w).sum() / scale)
    return Evaluation(loss, P, tau, grad_v, (g_sig, g_eps, g_s), grad_scale)


def gradients(scene, embedding, snapshots, frozen_paths, config=None, scale=1.0):
    """dL/dv per region and dL/ds for a snapshot batch with frozen paths."""
    config = config or CalibrationConfig()
    batch = compile_paths(list(frozen_paths), [s.freq for s in snapshots])
    mp, mt = measured_features(snapshots, config.sample_rate, config.n_taps)
    ev = evaluate(batch, embedding, scale, mp, mt, config)
    return ev.grad_v, ev.grad_scale, ev.loss


# -- optimiser ----------------------------------------------------------------------
class Adam:
    def __init__(self, shape, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return x - self.lr * mh / (np.sqrt(vh) + self.eps)


class SGD:
    def __init__(self, shape, lr):
        self.lr = lr

    def step(self, x, g):
        return x - self.lr * g


@dataclass
class CalibrationResult:
    embedding: MaterialEmbedding
    scale: ScaleState
    history: list               # loss per iteration (before the step)
    params_before: tuple
    params_after: tuple
    iterations: int
    converged: bool
    paths: list = field(default_factory=list)


def trace_snapshots(scene, snapshots, trace_config):
    return [trace_paths(scene, s.tx, s.rx, trace_config) for s in snapshots]


def calibrate(scene, embedding, snapshots, config=None, trace_config=None, scale=None,
              paths=None, callback=None):
    """Fit the per-region embeddings (and the global scale) to ``snapshots``.

    ``paths`` may supply traces for the snapshots; otherwise they are traced
    here. At every ``retrace_period``-th iteration traces are refreshed when the
    scene has moved to a new epoch since they were made (materials alone never
    change path geometry).
    """
    config = config or CalibrationConfig()
    trace_config = trace_config or TraceConfig()
    if len(snapshots) < 1:
        raise ValueError("need at least one snapshot")
    emb = embedding.copy()
    state = scale or ScaleState(1.0, config.ema_beta)
    if paths is None:
        paths = trace_snapshots(scene, snapshots, trace_config)
    freqs = [s.freq for s in snapshots]
    batch = compile_paths(list(paths), freqs)
    meas_p, meas_tau = measured_features(snapshots, config.sample_rate, config.n_taps)
    G = len(snapshots)
    los_snaps = np.array([s.los_index is not None for s in snapshots])
    meas_los = np.array([s.mpcs[s.los_index].power if s.los_index is not None else np.nan
                         for s in snapshots])
    los_path = np.full(G, -1)
    for i in np.flatnonzero(batch.kind == 0):
        los_path[batch.snap[i]] = i

    opt = (Adam(emb.vectors.shape, config.lr, config.adam_betas, config.adam_eps)
           if config.optimizer == "adam" else SGD(emb.vectors.shape, config.lr))
    rng = np.random.default_rng(config.seed)
    B = G if config.batch_size is None else min(config.batch_size, G)
    order = np.arange(G)
    cursor = G
    before = tuple(np.array(x) for x in emb.params())
    history = []
    converged = False
    it = 0
    for it in range(config.max_iter + 1):
        if it and config.retrace_period and it % config.retrace_period == 0:
            if any(p.epoch != scene.epoch or p.scene_uid != scene.uid for p in paths):
                paths = trace_snapshots(scene, snapshots, trace_config)
                batch = compile_paths(list(paths), freqs)
        if B == G:
            snaps = order
        else:
            if cursor + B > G:
                order = rng.permutation(G)
                cursor = 0
            snaps = np.sort(order[cursor:cursor + B])
            cursor += B

        # scale: EMA toward the LoS power ratio on tagged snapshots of this batch
        use = snaps[los_snaps[snaps] & (los_path[snaps] >= 0)]
        if len(use):
            sig, eps, s = emb.params()
            amp = forward(batch, sig, eps, s)
            pred = np.abs(amp[los_path[use]]) ** 2
            s_star = instantaneous_scale(pred, meas_los[use])
            state = ScaleState(state.beta * state.scale + (1 - state.beta) * s_star, state.beta)

        ev = evaluate(batch, emb, state.scale, meas_p, meas_tau, config, snaps)
        if not np.isfinite(ev.loss) or not np.all(np.isfinite(ev.grad_v)):
            raise CalibrationDiverged(
                f"non-finite loss/gradient at iteration {it}: loss={ev.loss}, "
                f"params={emb.params()}, scale={state.scale}")
        history.append(ev.loss)
        if callback is not None:
            callback(it, ev, emb, state)
        if ev.loss <= config.tol:
            converged = True
            break
        if it == config.max_iter:
            break
        opt.lr = config.lr_at(it)
        emb.vectors = opt.step(emb.vectors, ev.grad_v)
        sig, eps, s = emb.params()
        assert np.all(sig > 0) and np.all(eps >= 1) and np.all((s > 0) & (s < 1))
        log.debug("iter %d loss %.6g scale %.6g", it, ev.loss, state.scale)
    after = tuple(np.array(x) for x in emb.params())
    return CalibrationResult(emb, state, history, before, after, it, converged, paths)


# -- synthetic soundings ------------------------------------------------------------
def simulate_snapshots(scene, materials, poses, freq, trace_config=None, scale=1.0,
                       paths=None):
    """Noise-free soundings predicted with ``materials`` for (tx, rx) ``poses``."""
    trace_config = trace_config or TraceConfig()
    out = []
    for i, (tx, rx) in enumerate(poses):
        res = paths[i] if paths is not None else trace_paths(scene, tx, rx, trace_config)
        mpcs, _ = synthesize(res, materials, freq, ScaleState(scale, 0.0))
        los = next((k for k, m in enumerate(mpcs) if m.kind == "los"), None)
        out.append(Snapshot(tx, rx, freq, mpcs, los, f"s{i:04d}"))
    return out


def random_poses(n, lo, hi, rng, min_separation=0.5):
    """``n`` (tx, rx) pairs drawn uniformly inside the box [lo, hi]."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    out = []
    while len(out) < n:
        a, b = rng.uniform(lo, hi), rng.uniform(lo, hi)
        if np.linalg.norm(a - b) >= min_separation:
            out.append((a, b))
    return out


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(history):
            w.writerow([i, repr(float(v))])


def write_param_table(path, labels, before, after):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "label", "sigma_before", "eps_r_before", "s_before",
                    "sigma_after", "eps_r_after", "s_after"])
        for k in range(len(before[0])):
            lab = labels[k] if k < len(labels) else ""
            w.writerow([k, lab] + [repr(float(x[k])) for x in before]
                       + [repr(float(x[k])) for x in after])
