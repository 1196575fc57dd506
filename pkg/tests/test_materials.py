import os
import warnings

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from mmtwin.materials import (EPS0, MaterialDatabase, MaterialEmbedding, MaterialNotFound,
                              RadioMaterial, Readout, complex_permittivity,
                              embedding_from_params, load_material_db, params_from_embedding,
                              params_jacobian, save_material_db)

from conftest import DATA

FIXTURE = os.path.join(DATA, "materials_fixture.yaml")


def test_fixture_loads_and_round_trips(tmp_path):
    db = load_material_db(FIXTURE)
    c = db.lookup("concrete")
    assert (c.eps_r, c.sigma, c.s_range) == (5.24, 0.123, (0.3, 0.5))
    save_material_db(db, tmp_path / "db.yaml")
    again = load_material_db(tmp_path / "db.yaml")
    assert again.to_dict() == db.to_dict()


def test_synonym_and_case_lookup():
    db = load_material_db(FIXTURE)
    assert db.lookup("cement") is db.lookup("concrete")
    assert db.lookup("  Timber ") is db.lookup("wood")
    with pytest.raises(MaterialNotFound):
        db.lookup("unobtainium")


def test_lookup_total_over_names():
    db = load_material_db()
    for m in db:
        for name in (m.label, *m.synonyms):
            assert db.lookup(name.upper()) is m


def test_duplicates_and_invariants(tmp_path):
    with pytest.raises(ValueError):
        MaterialDatabase([RadioMaterial("a", 2.0, 1.0, (0, 1)),
                          RadioMaterial("b", 2.0, 1.0, (0, 1), synonyms=("A",))])
    for bad in [dict(eps_r=0.5), dict(sigma=0.0), dict(s_range=(0.5, 0.2)),
                dict(s_range=(0.1, 1.2))]:
        kw = dict(label="x", eps_r=2.0, sigma=1.0, s_range=(0.1, 0.2))
        kw.update(bad)
        with pytest.raises(ValueError):
            RadioMaterial(**kw)
    doc = yaml.safe_load(open(FIXTURE))
    del doc["materials"][0]["eps_r"]
    (tmp_path / "bad.yaml").write_text(yaml.safe_dump(doc))
    with pytest.raises(ValueError):
        load_material_db(tmp_path / "bad.yaml")


def test_bundled_db_is_valid():
    db = load_material_db()
    assert {"concrete", "plasterboard", "glass", "wood", "metal", "human body"} <= set(db.labels())
    assert db.frequency_ghz == 60.5


# -- read-out -------------------------------------------------------------------------
def test_zero_activation():
    ro = Readout.random(8, 0)
    s, e, S = params_from_embedding(np.zeros(8), ro)
    assert (s, e, S) == (1.0, 2.0, 0.5)


def test_log_sigma_example():
    ro = Readout.random(8, 1)
    v = embedding_from_params(0.0462, 2.0, 0.5, ro)
    assert v @ ro.W[0] == pytest.approx(np.log(0.0462), abs=1e-12)
    assert np.log(0.0462) == pytest.approx(-3.074, abs=1e-3)
    assert params_from_embedding(v, ro)[0] == pytest.approx(0.0462, rel=1e-12)


def test_min_norm_zero():
    ro = Readout.random(8, 2)
    assert np.allclose(embedding_from_params(1.0, 2.0, 0.5, ro), 0, atol=1e-15)


def test_min_norm_is_orthogonal_to_null_space():
    ro = Readout.random(8, 3)
    v = embedding_from_params(0.3, 4.0, 0.2, ro)
    # minimum-norm solution lies in the row space of W
    assert np.allclose(v, (v @ ro.W.T) @ ro.W, atol=1e-12)


def test_s_limits_monotone():
    ro = Readout.random(8, 0)
    z = np.linspace(-50, 50, 201)
    S = params_from_embedding(z[:, None] * ro.W[2], ro)[2]
    assert np.all(np.diff(S) >= 0)
    assert S[0] < 1e-15 and 1 - S[-1] < 1e-15
    assert np.all((S > 0) & (S < 1))


def test_bounds_fuzz_1e5():
    ro = Readout.random(8, 5)
    v = np.random.default_rng(0).normal(scale=200.0, size=(100_000, 8))
    s, e, S = params_from_embedding(v, ro)
    assert np.all(s > 0) and np.all(e >= 1) and np.all((S > 0) & (S < 1))
    assert np.all(np.isfinite(s)) and np.all(np.isfinite(e))


@given(st.floats(1e-4, 1e4), st.floats(1.0 + 1e-6, 100.0), st.floats(1e-6, 1 - 1e-6),
       st.integers(0, 1000))
def test_round_trip(sigma, eps, S, seed):
    ro = Readout.random(8, seed)
    out = params_from_embedding(embedding_from_params(sigma, eps, S, ro), ro)
    for a, b in zip(out, (sigma, eps, S)):
        assert a == pytest.approx(b, rel=1e-9)


def test_clamped_bounds_warn():
    ro = Readout.random(8, 0)
    with pytest.warns(UserWarning):
        v = embedding_from_params(1.0, 1.0, 0.5, ro)
    assert params_from_embedding(v, ro)[1] > 1.0
    with pytest.warns(UserWarning):
        embedding_from_params(1.0, 2.0, 1.0, ro)
    with pytest.raises(ValueError):
        embedding_from_params(0.0, 2.0, 0.5, ro)
    with pytest.raises(ValueError):
        Readout.random(2)
    with pytest.raises(ValueError):
        embedding_from_params(1.0, 2.0, 0.5, Readout(np.array([[1.0, 0, 0], [2.0, 0, 0],
                                                                [0, 0, 1.0]])))


def test_jacobian_finite_differences():
    ro = Readout.random(8, 7)
    v = np.random.default_rng(1).normal(size=8)
    J = params_jacobian(v, ro)
    h = 1e-6
    for i in range(8):
        e = np.zeros(8)
        e[i] = h
        fd = [(a - b) / (2 * h) for a, b in zip(params_from_embedding(v + e, ro),
                                                 params_from_embedding(v - e, ro))]
        for k in range(3):
            assert J[k][i] == pytest.approx(fd[k], rel=1e-6, abs=1e-9)


def test_embedding_from_materials():
    db = load_material_db()
    ro = Readout.random(8, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        emb = MaterialEmbedding.from_materials([db.lookup("concrete"), db.lookup("glass")], ro)
    s, e, S = emb.params()
    assert s[0] == pytest.approx(db.lookup("concrete").sigma, rel=1e-12)
    assert S[1] == pytest.approx(db.lookup("glass").s_mid, rel=1e-12)
    assert emb.labels == ["concrete", "glass"]


# -- permittivity ---------------------------------------------------------------------
def test_complex_permittivity():
    assert complex_permittivity(3.0, 0.0, 1e9) == 3.0
    eta = complex_permittivity(5.24, 0.123, 60.5e9)
    assert eta.imag == pytest.approx(-0.0365, abs=5e-5)
    assert eta.imag == pytest.approx(-0.123 / (2 * np.pi * 60.5e9 * EPS0), rel=1e-15)
    with pytest.raises(ValueError):
        complex_permittivity(2.0, 1.0, 0.0)


@given(st.floats(1, 50), st.floats(0, 100), st.floats(0, 100), st.floats(1e9, 1e11))
def test_permittivity_monotone_in_sigma(eps, s1, s2, f):
    lo, hi = sorted([s1, s2])
    a, b = complex_permittivity(eps, lo, f), complex_permittivity(eps, hi, f)
    assert abs(b.imag) >= abs(a.imag)
    assert a.imag <= 0 and a.real >= 1
