import itertools

import numpy as np
import mpmath as mp
import pytest
from hypothesis import given, strategies as st

from mmtwin.channel import ChannelImpulseResponse, MultipathComponent, synthesize
from mmtwin.metrics import (cluster_match, read_metrics_csv, shadow_loss, snapshot_metrics,
                            tap_features, write_metrics_csv)


def mk(p, tau, az, el=0.0, kind="specular", phase=0.0):
    return MultipathComponent(tau, 0.0, 0.0, az, el, np.sqrt(p) * np.exp(1j * phase), kind)


def test_single_mpc():
    m = snapshot_metrics([mk(1e-6, 30e-9, 0.4)])
    assert m.rms_delay_spread == 0 and m.angular_spread == 0
    assert m.pathloss_db == pytest.approx(60.0, abs=1e-12)
    assert m.k_factor_db is None


def test_worked_values():
    m = snapshot_metrics([mk(1, 0, 0.0), mk(1, 10e-9, 0.0)])
    assert m.rms_delay_spread == pytest.approx(5e-9, rel=1e-12)
    m = snapshot_metrics([mk(1, 0, np.radians(30)), mk(1, 0, -np.radians(30))])
    assert m.angular_spread == pytest.approx(0.5364, abs=5e-5)
    assert m.angular_spread_deg == pytest.approx(30.73, abs=0.005)
    m = snapshot_metrics([mk(9, 0, 0, kind="los"), mk(0.6, 1e-9, 1), mk(0.4, 2e-9, 2)], 0)
    assert m.k_factor_db == pytest.approx(10 * np.log10(9), abs=1e-12)
    assert m.k_factor_db == pytest.approx(9.54, abs=0.005)


def test_errors():
    with pytest.raises(ValueError):
        snapshot_metrics([mk(0, 0, 0)])
    with pytest.raises(ValueError):
        snapshot_metrics([])
    with pytest.raises(ValueError):
        snapshot_metrics([mk(1, 0, 0)], side="up")


def brute(ps, taus, phis, los=None):
    """Table formulas evaluated term by term at 50 significant digits."""
    with mp.workdps(50):
        ps = [mp.mpf(p) for p in ps]
        tot = mp.fsum(ps)
        m1 = mp.fsum(p * t for p, t in zip(ps, taus)) / tot
        m2 = mp.fsum(p * mp.mpf(t) ** 2 for p, t in zip(ps, taus)) / tot
        z = mp.fsum(p * mp.expj(f) for p, f in zip(ps, phis)) / tot
        k = None
        if los is not None:
            k = float(10 * mp.log10(ps[los] / mp.fsum(p for i, p in enumerate(ps) if i != los)))
        return (float(-10 * mp.log10(tot)), float(mp.sqrt(m2 - m1 * m1)),
                float(mp.sqrt(-2 * mp.log(abs(z)))), k)


def test_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = rng.integers(2, 40)
        ps = list(10 ** rng.uniform(-12, -5, n))
        taus = list(rng.uniform(0, 500e-9, n))
        phis = list(rng.uniform(-np.pi, np.pi, n))
        los = int(rng.integers(n))
        m = snapshot_metrics([mk(*a) for a in zip(ps, taus, phis)], los)
        pl, tr, as_, k = brute(ps, taus, phis, los)
        assert m.pathloss_db == pytest.approx(pl, rel=1e-12)
        assert m.rms_delay_spread == pytest.approx(tr, rel=1e-12)
        assert m.angular_spread == pytest.approx(as_, rel=1e-12)
        assert m.k_factor_db == pytest.approx(k, rel=1e-12, abs=1e-12)


@given(st.lists(st.tuples(st.floats(1e-9, 1.0), st.floats(0, 1e-6), st.floats(-3.1, 3.1)),
                min_size=2, max_size=20),
       st.floats(1e-3, 1e3))
def test_scale_invariance(items, c):
    a = snapshot_metrics([mk(*x) for x in items], 0)
    b = snapshot_metrics([mk(p * c, t, f) for p, t, f in items], 0)
    assert b.rms_delay_spread == pytest.approx(a.rms_delay_spread, rel=1e-9, abs=1e-20)
    assert b.angular_spread == pytest.approx(a.angular_spread, rel=1e-6, abs=1e-6)
    assert b.k_factor_db == pytest.approx(a.k_factor_db, rel=1e-9, abs=1e-9)
    assert b.pathloss_db == pytest.approx(a.pathloss_db - 10 * np.log10(c), abs=1e-9)


# -- tap features -------------------------------------------------------------------
def test_tap_features_examples():
    h = np.zeros(64, complex)
    h[0] = 1
    assert tap_features(ChannelImpulseResponse(h, 2e9)) == (1.0, 0.0)
    h = np.zeros(64, complex)
    h[0] = h[20] = 1
    P, tau = tap_features(ChannelImpulseResponse(h, 2e9))
    assert P == 2 and tau == pytest.approx(5e-9, rel=1e-12)
    with pytest.raises(ValueError):
        tap_features(ChannelImpulseResponse(np.zeros(8), 2e9))


@given(st.lists(st.complex_numbers(max_magnitude=1.0), min_size=1, max_size=30),
       st.integers(0, 30))
def test_tap_shift_invariance(taps, k):
    h = np.zeros(64, complex)
    h[:len(taps)] = taps
    if not np.sum(np.abs(h) ** 2) > 1e-200:
        return
    a = tap_features(ChannelImpulseResponse(h, 2e9))
    b = tap_features(ChannelImpulseResponse(np.roll(h, k), 2e9))
    assert b[0] == pytest.approx(a[0], rel=1e-12)
    assert b[1] == pytest.approx(a[1], rel=1e-9, abs=1e-21)


def test_tap_features_of_single_path():
    from mmtwin.channel import ScaleState
    from mmtwin.tracer import PathKind, PropagationPath
    p = PropagationPath(PathKind.LOS, np.zeros(3), np.array([3.0, 0, 0]), (), ("los",))
    mpcs, cir = synthesize([p], ([1.0], [2.0], [0.5]), 60.5e9, ScaleState(2.5), sample_rate=2e9)
    P, tau = tap_features(cir)
    assert tau == 0.0
    assert P == abs(mpcs[0].amplitude) ** 2


# -- shadow loss --------------------------------------------------------------------
def test_shadow_loss():
    assert shadow_loss(1 + 1j, 1 + 1j) == 0
    assert shadow_loss(1e-3, 1e-4j) == pytest.approx(20.0, abs=1e-12)
    assert shadow_loss(1.0, 2.0) < 0
    with pytest.raises(ValueError):
        shadow_loss(1.0, 0.0)


# -- cluster matching ---------------------------------------------------------------
def _rand_set(rng, n, spread_ns=20, spread_deg=20):
    return [mk(10 ** rng.uniform(-8, -5), rng.uniform(0, spread_ns) * 1e-9,
               np.radians(rng.uniform(-spread_deg, spread_deg)),
               np.radians(rng.uniform(-5, 5))) for _ in range(n)]


def test_identical_and_disjoint():
    rng = np.random.default_rng(1)
    a = _rand_set(rng, 6)
    r = cluster_match(a, a)
    assert r.n_matched == 6 and r.misses == 0 and r.false_alarms == 0
    assert np.all(r.delay_error == 0) and np.allclose(r.angle_error, 0, atol=1e-7)
    b = [mk(m.power, m.delay + 1e-6, m.aoa_az) for m in a]
    r = cluster_match(a, b)
    assert r.n_matched == 0 and r.misses == 6 and r.false_alarms == 6
    r = cluster_match([], a)
    assert r.misses == 6 and r.false_alarms == 0
    with pytest.raises(ValueError):
        cluster_match(a, a, gate_delay=0)


def _oracle(pred, meas, gd, ga):
    from mmtwin.metrics import _angle_between
    best = (-1, np.inf)
    for perm in itertools.permutations(range(len(meas))):
        cnt, cost = 0, 0.0
        for i, j in enumerate(perm):
            dt = abs(pred[i].delay - meas[j].delay)
            da = _angle_between(pred[i].aoa_az, pred[i].aoa_el, meas[j].aoa_az, meas[j].aoa_el)
            if dt <= gd and da <= ga:
                cnt += 1
                cost += dt / gd + da / ga
        if cnt > best[0] or (cnt == best[0] and cost < best[1] - 1e-12):
            best = (cnt, cost)
    return best


def test_exhaustive_oracle():
    rng = np.random.default_rng(2)
    gd, ga = 5e-9, np.radians(10)
    for _ in range(300):
        pred, meas = _rand_set(rng, 4), _rand_set(rng, 4)
        r = cluster_match(pred, meas, gd, ga)
        cnt, cost = _oracle(pred, meas, gd, ga)
        assert r.n_matched == cnt
        assert r.cost == pytest.approx(cost, abs=1e-9)
        assert len({i for i, _ in r.pairs}) == cnt == len({j for _, j in r.pairs})


def test_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a, b = _rand_set(rng, rng.integers(1, 7)), _rand_set(rng, rng.integers(1, 7))
        r1, r2 = cluster_match(a, b), cluster_match(b, a)
        assert r1.n_matched == r2.n_matched
        assert (r1.misses, r1.false_alarms) == (r2.false_alarms, r2.misses)
        assert r1.cost == pytest.approx(r2.cost, abs=1e-9)


def test_metrics_csv(tmp_path):
    ms = [snapshot_metrics([mk(1e-6, 0, 0, kind="los"), mk(1e-7, 5e-9, 1.0)], 0),
          snapshot_metrics([mk(1e-6, 0, 0)])]
    write_metrics_csv(tmp_path / "m.csv", ["a", "b"], ms)
    back = read_metrics_csv(tmp_path / "m.csv")
    for i, m in zip("ab", ms):
        assert back[i].pathloss_db == m.pathloss_db
        assert back[i].rms_delay_spread == pytest.approx(m.rms_delay_spread, rel=1e-15)
        assert back[i].k_factor_db == m.k_factor_db
