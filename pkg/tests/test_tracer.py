import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from mmtwin.geometry import Scene, box_mesh, mirror_reflect, plane_mesh, scene_from_arrays
from mmtwin.materials import C0
from mmtwin.tracer import (PathKind, TraceConfig, direction_uniforms, launch_directions,
                           read_path_lines, sample_scatter_direction, trace_paths, write_paths)

FAST = TraceConfig(n_rays=20_000)


def test_empty_scene_single_los():
    tx, rx = np.array([0, 0, 1.0]), np.array([3, 4, 1.0])
    res = trace_paths(Scene.empty(), tx, rx, FAST)
    assert len(res) == 1
    assert res[0].kind is PathKind.LOS
    assert res[0].length == pytest.approx(5.0, abs=1e-15)


def test_plane_image_method(ground):
    tx, rx = np.array([0, 0, 2.0]), np.array([4, 0, 2.0])
    res = trace_paths(ground, tx, rx, FAST)
    kinds = [p.kind for p in res]
    assert kinds.count(PathKind.LOS) == 1
    spec = [p for p in res if p.kind is PathKind.SPECULAR]
    assert len(spec) == 1
    assert abs(spec[0].length - np.sqrt(32.0)) < 1e-9
    assert spec[0].length / C0 * 1e9 == pytest.approx(18.87, abs=0.01)
    assert np.allclose(spec[0].interactions[0].point, [2, 0, 0], atol=1e-12)


def test_blocked_los():
    g = plane_mesh(np.zeros(3), np.array([0, 0, 1.0]), 50.0)
    slab = box_mesh((1.9, -5, 0), (2.1, 5, 5))
    v = np.vstack([g[0], slab[0]])
    t = np.vstack([g[1], slab[1] + len(g[0])])
    sc = scene_from_arrays(v, t, np.r_[np.zeros(2, int), np.ones(12, int)])
    res = trace_paths(sc, np.array([0, 0, 2.0]), np.array([4, 0, 2.0]), FAST)
    assert all(p.kind is not PathKind.LOS for p in res)


def test_tx_equals_rx_rejected(room):
    with pytest.raises(ValueError):
        trace_paths(room, np.ones(3), np.ones(3), FAST)


def test_config_validation():
    for bad in (dict(n_rays=0), dict(max_depth=0), dict(scatter_keep_prob=0.0),
                dict(scatter_keep_prob=1.5)):
        with pytest.raises(ValueError):
            TraceConfig(**bad)
    assert TraceConfig().n_rays == 4_000_000 and TraceConfig().max_depth == 5
    assert TraceConfig().scatter_keep_prob == 1e-3


def _segments_clear(scene, path):
    a, b = path.segments()
    return not np.any(scene.occluded(a, b, eps=1e-6))


def _mirror_ok(path):
    v = path.vertices
    for j, it in enumerate(path.interactions):
        d_in = (v[j + 1] - v[j]) / np.linalg.norm(v[j + 1] - v[j])
        d_out = (v[j + 2] - v[j + 1]) / np.linalg.norm(v[j + 2] - v[j + 1])
        r = mirror_reflect(d_in, it.normal)
        if np.arccos(np.clip(r @ d_out, -1, 1)) > 1e-6:
            return False
    return True


@pytest.fixture(scope="module")
def room_trace(room):
    return trace_paths(room, np.array([1.0, 1.2, 1.5]), np.array([4.7, 2.9, 1.1]),
                       TraceConfig(n_rays=100_000))


def test_room_paths_verified(room, room_trace):
    res = room_trace
    kinds = [p.kind for p in res]
    assert kinds.count(PathKind.LOS) == 1
    spec = [p for p in res if p.kind is PathKind.SPECULAR]
    # the six first-order images of a convex room are always valid
    assert sum(p.depth == 1 for p in spec) == 6
    assert max(p.depth for p in spec) == 5
    for p in spec:
        assert _segments_clear(room, p)
        assert _mirror_ok(p)
        for it in p.interactions:
            assert it.region == room.regions[it.triangle]
    for p in res:
        if p.kind is PathKind.SCATTERED:
            assert p.depth == 1
            assert _segments_clear(room, p)
            it = p.interactions[0]
            assert it.normal @ (p.rx - it.point) > 0
    assert len(set(res.keys())) == len(res)


def test_first_order_images_exact(room, room_trace):
    tx, rx = room_trace.tx, room_trace.rx
    want = []
    for axis, lo, hi in ((0, 0, 6), (1, 0, 4), (2, 0, 3)):
        for wall in (lo, hi):
            img = tx.copy()
            img[axis] = 2 * wall - tx[axis]
            want.append(np.linalg.norm(img - rx))
    got = sorted(p.length for p in room_trace if p.kind is PathKind.SPECULAR and p.depth == 1)
    assert np.allclose(got, sorted(want), atol=1e-9)


def test_deterministic(room):
    cfg = TraceConfig(n_rays=30_000, rng_seed=5)
    tx, rx = np.array([2.0, 1.0, 1.0]), np.array([5.0, 3.0, 2.0])
    a = trace_paths(room, tx, rx, cfg)
    b = trace_paths(room, tx, rx, cfg)
    fa, fb = io.StringIO(), io.StringIO()
    write_paths(fa, a)
    write_paths(fb, b)
    assert fa.getvalue() == fb.getvalue()
    c = trace_paths(room, tx, rx, cfg.replace(rng_seed=6))
    assert [k for k in a.keys() if k[0] != "scattered"] == \
           [k for k in c.keys() if k[0] != "scattered"]


def test_monotone_discovery(room):
    tx, rx = np.array([0.7, 0.5, 2.2]), np.array([5.1, 3.3, 0.8])
    prev = set()
    for n in (5_000, 20_000, 80_000):
        keys = {k for k in trace_paths(room, tx, rx, TraceConfig(n_rays=n)).keys()}
        spec = {k for k in keys if k[0] == "specular"}
        assert prev <= spec
        prev = spec


def test_launch_directions_nested_and_unit():
    a = launch_directions(1000)
    b = launch_directions(5000)
    assert np.array_equal(a, b[:1000])
    assert np.allclose(np.linalg.norm(b, axis=1), 1)
    assert np.array_equal(launch_directions(10, start=990), a[990:])
    # roughly area uniform: octant counts
    oct_ = (b > 0) @ np.array([1, 2, 4])
    assert np.bincount(oct_, minlength=8).min() > 5000 / 8 * 0.95


def test_direction_uniforms():
    u = direction_uniforms(3, 100_000)
    assert np.array_equal(u[:10], direction_uniforms(3, 10))
    assert 0 <= u.min() and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 0.01
    assert not np.array_equal(u[:100], direction_uniforms(4, 100))


def test_path_text_round_trip(room_trace):
    buf = io.StringIO()
    write_paths(buf, room_trace)
    rows = read_path_lines(buf.getvalue().splitlines())
    assert len(rows) == len(room_trace)
    for r, p in zip(rows, room_trace):
        assert r["kind"] == p.kind.value
        assert r["regions"] == p.regions
        assert r["length"] == p.length
        assert np.array_equal(np.array(r["points"]).reshape(-1, 3),
                              np.array([it.point for it in p.interactions]).reshape(-1, 3))


# -- Lambertian sampler ---------------------------------------------------------------
def test_scatter_mean_cosine():
    n = np.array([0.3, -0.2, 0.9])
    n /= np.linalg.norm(n)
    d = sample_scatter_direction(n, np.random.default_rng(0), 1_000_000)
    c = d @ n
    assert np.all(c > 0)
    assert np.allclose(np.linalg.norm(d, axis=1), 1)
    assert abs(c.mean() - 2 / 3) < 0.002


def test_scatter_cosine_histogram_chi_square():
    n = np.array([0, 0, 1.0])
    c = sample_scatter_direction(n, np.random.default_rng(1), 200_000) @ n
    edges = np.linspace(0, 1, 21)
    obs, _ = np.histogram(c, edges)
    expected = len(c) * np.diff(edges ** 2)      # density 2c on [0, 1]
    assert stats.chisquare(obs, expected).pvalue > 0.01


def test_scatter_azimuth_uniform():
    d = sample_scatter_direction(np.array([0, 0, 1.0]), np.random.default_rng(2), 100_000)
    phi = np.arctan2(d[:, 1], d[:, 0])
    assert stats.kstest((phi + np.pi) / (2 * np.pi), "uniform").pvalue > 0.01


@given(st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3),
       st.integers(0, 1000))
def test_scatter_hemisphere(n, seed):
    n = np.array(n) / np.linalg.norm(n)
    d = sample_scatter_direction(n, np.random.default_rng(seed), 100)
    assert np.all(d @ n > 0)
    single = sample_scatter_direction(n, np.random.default_rng(seed))
    assert single.shape == (3,)
