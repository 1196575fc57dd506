import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st
from plyfile import PlyData, PlyElement

from mmtwin.geometry import (MeshFormatError, Ray, box_mesh, intersect, load_mesh, mesh_distance,
                             mirror_reflect, plane_mesh, save_mesh, scene_from_arrays,
                             write_region_map)
from mmtwin.geometry.meshio import RegionRange

from conftest import unit


def brute_ray(corners, o, d, t_min=0.0, t_max=np.inf):
    """Moller-Trumbore over every triangle, in plain Python."""
    best, arg = np.inf, -1
    for i, (a, b, c) in enumerate(corners):
        e1, e2 = b - a, c - a
        p = np.cross(d, e2)
        det = e1 @ p
        if abs(det) < 1e-14:
            continue
        s = o - a
        u = (s @ p) / det
        q = np.cross(s, e1)
        v = (d @ q) / det
        t = (e2 @ q) / det
        if u >= 0 and v >= 0 and u + v <= 1 and t_min < t < t_max and t < best:
            best, arg = t, i
    return best, arg


# -- load_mesh ------------------------------------------------------------------------
def test_cube_one_region(tmp_path):
    v, t, _ = box_mesh((0, 0, 0), (1, 1, 1))
    save_mesh(tmp_path / "c.ply", v, t, np.zeros(12, int))
    sc = load_mesh(tmp_path / "c.ply")
    assert sc.n_triangles == 12 and sc.n_regions == 1


@pytest.mark.parametrize("binary", [True, False])
def test_cube_six_regions(tmp_path, binary):
    v, t, _ = box_mesh((0, 0, 0), (1, 1, 1))
    save_mesh(tmp_path / "c.ply", v, t, np.repeat(np.arange(6), 2), binary=binary)
    sc = load_mesh(tmp_path / "c.ply")
    assert sc.n_regions == 6
    assert set(sc.regions.tolist()) == set(range(6))
    assert np.allclose(np.linalg.norm(sc.normals, axis=1), 1, atol=1e-9)


def test_region_map_file_and_relabel(tmp_path):
    v, t, _ = box_mesh((0, 0, 0), (1, 1, 1))
    save_mesh(tmp_path / "c.ply", v, t)
    write_region_map(tmp_path / "c.regions", [RegionRange(0, 5, 10, "concrete"),
                                                RegionRange(6, 11, 42, "glass")])
    sc = load_mesh(tmp_path / "c.ply", tmp_path / "c.regions")
    assert sc.n_regions == 2
    assert sc.regions.tolist() == [0] * 6 + [1] * 6
    assert sc.region_labels == ["concrete", "glass"]


def test_degenerate_triangle_dropped(tmp_path, caplog):
    v, t, _ = box_mesh((0, 0, 0), (1, 1, 1))
    t = np.vstack([t, [0, 0, 1]])
    save_mesh(tmp_path / "c.ply", v, t, np.zeros(13, int))
    with caplog.at_level(logging.WARNING):
        sc = load_mesh(tmp_path / "c.ply")
    assert sc.n_triangles == 12
    assert sc.dropped_degenerate == 1


def test_load_errors(tmp_path):
    (tmp_path / "bad.ply").write_text("not a mesh")
    with pytest.raises(MeshFormatError):
        load_mesh(tmp_path / "bad.ply")
    v, t, _ = box_mesh((0, 0, 0), (1, 1, 1))
    save_mesh(tmp_path / "noreg.ply", v, t)
    with pytest.raises(MeshFormatError):
        load_mesh(tmp_path / "noreg.ply")
    vx = np.zeros(0, dtype=[("x", "f4"), ("y", "f4"), ("z", "f4")])
    fc = np.zeros(0, dtype=[("vertex_indices", "i4", (3,)), ("region", "i4")])
    PlyData([PlyElement.describe(vx, "vertex"), PlyElement.describe(fc, "face")]).write(
        str(tmp_path / "empty.ply"))
    with pytest.raises(MeshFormatError):
        load_mesh(tmp_path / "empty.ply")
    with pytest.raises(FileNotFoundError):
        load_mesh(tmp_path / "missing.ply")


# -- intersect ------------------------------------------------------------------------
def test_cube_hit_from_below(cube):
    h = intersect(cube, Ray(np.array([0, 0, -5.0]), np.array([0, 0, 1.0])))
    assert h.t == pytest.approx(4.5, abs=1e-12)
    assert np.allclose(h.normal, [0, 0, -1])
    assert np.allclose(h.point, [0, 0, -0.5])


def test_miss_is_none(cube):
    assert intersect(cube, Ray(np.array([0, 0, -5.0]), np.array([0, 0, -1.0]))) is None


def test_inside_hits_exit_face(cube):
    rng = np.random.default_rng(3)
    for _ in range(50):
        o = rng.uniform(-0.4, 0.4, 3)
        d = unit(rng.normal(size=3))
        h = intersect(cube, Ray(o, d))
        t, tri = brute_ray(cube.corners, o, d)
        assert h.t == pytest.approx(t, rel=1e-12)
        assert h.normal @ d <= 0


def test_ray_validation():
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([1.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([1.0, 0, 0]), 2.0, 1.0)


def random_soup(rng, n):
    c = rng.uniform(-2, 2, (n, 1, 3)) + rng.normal(scale=0.4, size=(n, 3, 3))
    v = c.reshape(-1, 3)
    return scene_from_arrays(v, np.arange(len(v)).reshape(-1, 3))


def test_index_equals_brute_force_1e4_rays():
    rng = np.random.default_rng(0)
    for k in range(5):
        sc = random_soup(rng, 200)
        o = rng.uniform(-3, 3, (2000, 3))
        d = unit(rng.normal(size=(2000, 3)))
        t1, i1 = sc.intersect_many(o, d, use_index=True)
        t2, i2 = sc.intersect_many(o, d, use_index=False)
        assert np.array_equal(i1, i2)
        assert np.array_equal(t1, t2)


def test_kernel_matches_python_oracle():
    rng = np.random.default_rng(1)
    sc = random_soup(rng, 40)
    o = rng.uniform(-3, 3, (200, 3))
    d = unit(rng.normal(size=(200, 3)))
    t, tri = sc.intersect_many(o, d)
    for k in range(200):
        tb, ib = brute_ray(sc.corners, o[k], d[k])
        assert tri[k] == ib
        if ib >= 0:
            assert t[k] == pytest.approx(tb, rel=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_hit_point_on_ray(seed):
    rng = np.random.default_rng(seed)
    sc = random_soup(rng, 20)
    o = rng.uniform(-3, 3, 3)
    d = unit(rng.normal(size=3))
    h = intersect(sc, Ray(o, d))
    if h is not None:
        assert np.linalg.norm(h.point - (o + h.t * d)) < 1e-6
        assert h.normal @ d <= 0
        assert h.region == sc.regions[h.triangle]


# -- mirror_reflect -------------------------------------------------------------------
def test_mirror_examples():
    assert np.allclose(mirror_reflect([0, 0, -1.0], [0, 0, 1.0]), [0, 0, 1])
    s = 1 / np.sqrt(2)
    assert np.allclose(mirror_reflect([s, 0, -s], [0, 0, 1.0]), [s, 0, s], atol=1e-15)
    with pytest.raises(ValueError):
        mirror_reflect([1.0, 0, 0], [0, 0, 1.0])


unit_vec = st.tuples(*[st.floats(-1, 1)] * 3).map(np.array).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(unit)


@given(unit_vec, unit_vec)
def test_mirror_properties(d, n):
    if abs(d @ n) < 1e-6:
        return
    if d @ n > 0:
        n = -n
    r = mirror_reflect(d, n)
    assert abs(np.linalg.norm(r) - 1) < 1e-12
    # tangential part preserved, normal part flipped
    assert np.allclose(r - (r @ n) * n, d - (d @ n) * n, atol=1e-12)
    assert (r @ n) == pytest.approx(-(d @ n), abs=1e-12)
    assert np.allclose(mirror_reflect(-r, n), -d, atol=1e-12)


# -- mesh_distance --------------------------------------------------------------------
def test_distance_identical(room):
    s = mesh_distance(room, room, 2000)
    assert np.max(s.distances) < 1e-9
    assert np.all(s.fraction_within == 1)


def test_distance_offset_plane():
    v, t = plane_mesh(np.zeros(3), np.array([0, 0, 1.0]), 1.0)
    a = scene_from_arrays(v, t)
    b = scene_from_arrays(v + [0, 0, 0.05], t)
    s = mesh_distance(a, b, 500, thresholds=[0.04, 0.07])
    assert np.allclose(s.distances, 0.05, atol=1e-12)
    assert s.fraction_within.tolist() == [0.0, 1.0]


def test_distance_scaled_cube_brute_force():
    v, t, _ = box_mesh((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    a = scene_from_arrays(v, t)
    b = scene_from_arrays(v * 1.1, t)
    s = mesh_distance(a, b, 300, seed=4)
    from mmtwin.geometry import sample_surface
    pts, _ = sample_surface(a, 300, np.random.default_rng(4))
    # brute force: closest point on each triangle by dense barycentric search + refinement
    for p, d in zip(pts[:60], s.distances[:60]):
        best = np.inf
        for tri in b.corners:
            best = min(best, _point_triangle(p, *tri))
        assert d == pytest.approx(best, abs=1e-9)


def _point_triangle(p, a, b, c):
    """Exact point-triangle distance via projection and edge clamping."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    q = p - ((p - a) @ n) * n
    # barycentric of projection
    v0, v1, v2 = b - a, c - a, q - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    if v >= 0 and w >= 0 and v + w <= 1:
        return np.linalg.norm(p - q)

    def seg(x, y):
        u = np.clip((p - x) @ (y - x) / ((y - x) @ (y - x)), 0, 1)
        return np.linalg.norm(p - (x + u * (y - x)))
    return min(seg(a, b), seg(b, c), seg(c, a))


def test_distance_errors(room):
    with pytest.raises(ValueError):
        mesh_distance(room, room, 0)
    from mmtwin.geometry import Scene
    with pytest.raises(ValueError):
        mesh_distance(Scene.empty(), room, 10)
