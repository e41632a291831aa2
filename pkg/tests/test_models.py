"""Polynomial safety models: features, least squares, scores, CV and persistence."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from ctxnav.errors import DomainError, LengthMismatch, ParseError, TooFewRuns, VersionMismatch
from ctxnav.models import (Dataset, PolynomialSafetyModel, QualityModel, Run, cross_validate, degree_sweep,
                           feature_names, fit_least_squares, load_model, monomials, mse, poly_features,
                           predict, r2_score, save_model)


def synthetic_runs(k=5, per=120, seed=0, shift=None):
    """Noiseless runs drawn from one fixed degree-4 polynomial on the observed domain."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=15)
    runs = []
    for _ in range(k):
        n = rng.uniform(0.3, 4.0, per)
        od = rng.uniform(0.0, 0.6, per)
        runs.append((n, od, poly_features((n - 2.0) / 1.1, (od - 0.3) / 0.17, 4) @ w))
    # rescale globally into [0.05, 0.95] so clamping never bites
    lo = min(r[2].min() for r in runs)
    hi = max(r[2].max() for r in runs)
    out = []
    for i, (n, od, y) in enumerate(runs):
        y = 0.05 + 0.9 * (y - lo) / (hi - lo)
        if shift is not None and i == shift:
            y = np.clip(y + 0.3, 0, 1)
        out.append(Run(np.column_stack([n, od, y])))
    return out


# -- features ---------------------------------------------------------------

def test_features_at_origin():
    for d in range(1, 7):
        f = poly_features(0.0, 0.0, d)
        assert f[0] == 1.0 and np.all(f[1:] == 0.0)


def test_degree2_example():
    # [TRIVIAL] order [1, n, od, n*od, n^2, od^2]
    assert np.allclose(poly_features(2.0, 0.5, 2), [1, 2, 0.5, 1.0, 4, 0.25], atol=1e-12)
    assert feature_names(2) == ["1", "n", "od", "n*od", "n^2", "od^2"]


@pytest.mark.parametrize("d", range(1, 8))
def test_feature_count(d):
    # [TRIVIAL] m = (d+1)(d+2)/2, each monomial once
    terms = monomials(d)
    assert len(terms) == (d + 1) * (d + 2) // 2 == len(set(terms))
    assert terms[0] == (0, 0)


def test_degree_zero_rejected():
    with pytest.raises(DomainError):
        monomials(0)


# -- least squares -----------------------------------------------------------

def test_fit_recovers_noiseless_polynomial():
    # [DERIVED] predictions match the generator
    rng = np.random.default_rng(1)
    n, od = rng.uniform(0, 3, 400), rng.uniform(0, 1, 400)
    X = poly_features(n, od, 4)
    y = X @ rng.normal(size=15)
    w = fit_least_squares(X, y)
    assert np.abs(X @ w - y).max() < 1e-6
    # residual orthogonal to the column space
    assert np.abs(X.T @ (y - X @ w)).max() < 1e-6 * np.abs(X.T @ y).max()


def test_fit_constant_target():
    rng = np.random.default_rng(2)
    X = poly_features(rng.uniform(0, 2, 50), rng.uniform(0, 1, 50), 3)
    assert np.allclose(X @ fit_least_squares(X, np.full(50, 0.7)), 0.7, atol=1e-9)


def test_fit_single_column_is_mean():
    y = np.array([0.1, 0.4, 0.9, 0.2])
    assert fit_least_squares(np.ones((4, 1)), y)[0] == pytest.approx(y.mean(), abs=1e-9)


def test_fit_errors():
    with pytest.raises(LengthMismatch):
        fit_least_squares(np.ones((3, 1)), np.ones(4))
    with pytest.raises(DomainError):
        fit_least_squares(np.ones((1, 2)), np.ones(1))
    with pytest.raises(DomainError):
        fit_least_squares(np.array([[1.0], [math.nan]]), np.ones(2))


def test_fit_rank_deficient_still_predicts():
    # duplicated column: coefficients not unique, predictions are
    rng = np.random.default_rng(3)
    a = rng.normal(size=30)
    X = np.column_stack([np.ones(30), a, a])
    y = 1.0 + 2.0 * a
    assert np.abs(X @ fit_least_squares(X, y) - y).max() < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 1000))
def test_fit_scale_consistent(alpha, seed):
    # scaling y by alpha scales raw predictions by alpha
    rng = np.random.default_rng(seed)
    X = rng.uniform([0.3, 0.0], [4.0, 0.6], size=(80, 2))
    y = rng.uniform(0, 1, 80)
    p1 = PolynomialSafetyModel(3).fit(X, y).predict_raw(X)
    p2 = PolynomialSafetyModel(3).fit(X, alpha * y).predict_raw(X)
    assert np.allclose(p2, alpha * p1, atol=1e-8 * max(1.0, alpha))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 199))
def test_duplicate_row_keeps_interpolation(seed, k):
    rng = np.random.default_rng(seed)
    n, od = rng.uniform(0.3, 4, 200), rng.uniform(0, 0.6, 200)
    y = poly_features((n - 2) / 1.1, (od - 0.3) / 0.17, 4) @ rng.normal(size=15)
    X = np.column_stack([n, od])
    Xd, yd = np.vstack([X, X[k]]), np.append(y, y[k])
    p = PolynomialSafetyModel(4).fit(Xd, yd).predict_raw(X)
    assert np.abs(p - y).max() < 1e-6 * max(1.0, np.abs(y).max())


# -- scores ---------------------------------------------------------------

def test_score_examples():
    y = np.array([0.2, 0.5, 0.9])
    assert r2_score(y, y) == 1.0 and mse(y, y) == 0.0
    assert r2_score(y, np.full(3, y.mean())) == pytest.approx(0.0, abs=1e-12)
    assert mse([0, 1], [0.5, 0.5]) == pytest.approx(0.25)
    assert r2_score([0, 1], [0.5, 0.5]) == pytest.approx(0.0)


def test_score_constant_target():
    assert r2_score([0.3, 0.3], [0.3, 0.3]) == 1.0
    assert r2_score([0.3, 0.3], [0.3, 0.4]) == 0.0


def test_score_length_mismatch():
    with pytest.raises(LengthMismatch):
        mse([1, 2], [1])
    with pytest.raises(LengthMismatch):
        r2_score([], [])


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.floats(-1, 1))
def test_score_properties(ys, delta):
    y = np.array(ys)
    assert mse(y, y + delta) == pytest.approx(delta ** 2, abs=1e-12)
    assert r2_score(y, y + delta) <= 1.0


# -- estimator and persisted model --------------------------------------------------

def test_sklearn_estimator_contract():
    est = PolynomialSafetyModel(degree=3, standardize=False)
    assert est.get_params() == {"degree": 3, "standardize": False}
    c = clone(est)
    assert c.get_params() == est.get_params() and not hasattr(c, "coef_")
    rng = np.random.default_rng(0)
    X, y = rng.uniform(0, 1, (40, 2)), rng.uniform(0, 1, 40)
    est.fit(X, y)
    assert est.score(X, y) == pytest.approx(r2_score(y, est.predict(X)))
    with pytest.raises(ValueError):
        est.fit(rng.uniform(0, 1, (40, 3)), y)


def test_predict_constant_model():
    # [TRIVIAL] w = [c, 0, ...] -> c for all inputs, clamped
    m = QualityModel("dwa_v1_a0_b0", 2, [0.4, 0, 0, 0, 0, 0])
    assert predict(m, 3.0, 0.2) == pytest.approx(0.4)
    assert np.allclose(predict(m, np.array([0.1, 9.0]), np.array([0.0, 1.0])), 0.4)
    hi = QualityModel("dwa_v1_a0_b0", 2, [1.7, 0, 0, 0, 0, 0])
    assert predict(hi, 0.0, 0.0) == 1.0


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_predict_clamped_far_outside_domain(n, od):
    rng = np.random.default_rng(5)
    m = QualityModel("teb_v1_a0_b0", 4, list(rng.normal(size=15)), [2.0, 0.3], [1.0, 0.2])
    assert 0.0 <= predict(m, n, od) <= 1.0


def test_quality_model_matches_estimator():
    rng = np.random.default_rng(6)
    X, y = rng.uniform([0.3, 0], [4, 0.6], (100, 2)), rng.uniform(0, 1, 100)
    est = PolynomialSafetyModel(4).fit(X, y)
    qm = est.to_quality_model("dwa_v1_a0_b0")
    assert np.allclose(qm.predict(X[:, 0], X[:, 1]), est.predict(X), atol=1e-12)


def test_coefficient_count_checked():
    with pytest.raises(DomainError):
        QualityModel("x", 4, [0.0] * 14)


def test_save_load_roundtrip(tmp_path):
    m = QualityModel("teb_v2_a1_b0", 4, [float(i) / 7 for i in range(15)], [1.5, 0.2], [0.9, 0.1],
                     (0.8, 0.01), (0.7, 0.02))
    save_model(m, tmp_path / "m.json")
    assert load_model(tmp_path / "m.json") == m
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["feature_order"] == feature_names(4)


def test_load_errors(tmp_path):
    m = QualityModel("teb_v2_a1_b0", 2, [0.1] * 6)
    save_model(m, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(ParseError):
        load_model(tmp_path / "t.json")
    d = json.loads(text)
    d["format_version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(d))
    with pytest.raises(VersionMismatch):
        load_model(tmp_path / "v.json")
    d = json.loads(text)
    d["feature_order"] = d["feature_order"][::-1]
    (tmp_path / "o.json").write_text(json.dumps(d))
    with pytest.raises(ParseError):
        load_model(tmp_path / "o.json")


def test_run_validation():
    with pytest.raises(DomainError):
        Run(np.array([[1.0, 0.1, 1.2]]))
    with pytest.raises(DomainError):
        Run(np.array([[math.inf, 0.1, 0.5]]))


# -- cross-validation -------------------------------------------------------------

def test_cv_noiseless_polynomial():
    # [DERIVED] every fold reproduces the generator
    model, rep = cross_validate(Dataset("dwa_v1_a0_b0", synthetic_runs()), 4)
    assert len(rep.folds) == 5
    assert all(f.test_r2 > 1 - 1e-9 and f.train_r2 > 1 - 1e-9 for f in rep.folds)
    assert model.test_score[0] == rep.folds[rep.selected].test_r2


def test_cv_selects_consistent_fold():
    # [DERIVED] brute force: the selected fold is argmax test r2 and not the shifted run
    runs = synthetic_runs(shift=2, seed=4)
    _, rep = cross_validate(Dataset("x", runs), 4)
    brute = []
    for i in range(5):
        tr = np.vstack([r.rows for j, r in enumerate(runs) if j != i])
        est = PolynomialSafetyModel(4).fit(tr[:, :2], tr[:, 2])
        brute.append(r2_score(runs[i].y, est.predict(runs[i].X)))
    assert rep.selected == int(np.argmax(brute))
    assert rep.folds[rep.selected].test_run != 2
    assert np.allclose([f.test_r2 for f in rep.folds], brute)


def test_cv_fold_disjointness():
    _, rep = cross_validate(Dataset("x", synthetic_runs(k=4)), 2)
    for i, f in enumerate(rep.folds):
        assert f.test_run == i and f.test_run not in rep.train_indices(i)
        assert sorted(rep.train_indices(i) + [f.test_run]) == list(range(4))


def test_cv_too_few_runs():
    with pytest.raises(TooFewRuns):
        cross_validate(Dataset("x", synthetic_runs(k=1)), 4)


def test_degree_sweep_shape():
    rows = degree_sweep([Dataset("x", synthetic_runs(k=3))], [1, 4])
    assert [r["degree"] for r in rows] == [1, 4]
    assert rows[1]["r2"] > 1 - 1e-9 and rows[1]["r2"] >= rows[0]["r2"]
