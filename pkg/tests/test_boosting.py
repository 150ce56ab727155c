import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvtreeboost.boosting import (BoostParams, MvModel, boost_multivariate, boost_univariate,
                                  cov_discrepancy, fit_multivariate, fit_univariate,
                                  predict_ensemble)
from mvtreeboost.dataset import Dataset
from mvtreeboost.exceptions import DataError, FormatVersionError, NumericalError
from mvtreeboost.interpret import relative_influence
from mvtreeboost.tree import fit_tree
from mvtreeboost.tuning import cv_select_trees
from oracles import brute_tree, sample_cov


def _toy(seed, n=120, p=4, Q=3, missing=0.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    B = rng.normal(size=(p, Q))
    Y = X @ B + rng.normal(size=(n, Q))
    if missing:
        X[rng.random(X.shape) < missing] = np.nan
    return X, Y


# -- cov_discrepancy ----------------------------------------------------------

def test_cov_discrepancy_examples():
    I = np.eye(2)
    assert cov_discrepancy(I, I) == 0.0
    assert cov_discrepancy(I, [[1, 0.5], [0.5, 1]]) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        cov_discrepancy(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        cov_discrepancy([[1, 0.2], [0.0, 1]], I)


@given(st.integers(0, 2**32 - 1))
def test_cov_discrepancy_double_loop(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    A = A + A.T
    B = rng.normal(size=(3, 3))
    B = B + B.T
    ref = 0.0
    for a in range(3):
        for b in range(3):
            ref += (A[a, b] - B[a, b]) ** 2
    assert cov_discrepancy(A, B) == pytest.approx(ref, rel=1e-12)


# -- params ---------------------------------------------------------------------

def test_params_defaults_and_validation():
    p = BoostParams()
    assert (p.n_trees, p.shrinkage, p.bag_fraction, p.depth, p.min_node) == (100, 0.01, 0.5, 1, 10)
    for kw in ({"shrinkage": 0}, {"shrinkage": 1.5}, {"bag_fraction": 0}, {"depth": 0},
               {"n_trees": -1}, {"min_node": 0}):
        with pytest.raises(ValueError):
            BoostParams(**kw)
    assert BoostParams.from_dict(p.to_dict()) == p


# -- univariate -----------------------------------------------------------------

def test_zero_trees_predicts_mean():
    X, Y = _toy(0)
    m = fit_multivariate(X, Y, BoostParams(n_trees=0))
    np.testing.assert_array_equal(m.predict(X), np.tile(Y.mean(axis=0), (len(X), 1)))
    u = fit_univariate(X, Y[:, 0], BoostParams(n_trees=0))
    np.testing.assert_array_equal(u.predict(X)[:, 0], np.full(len(X), Y[:, 0].mean()))


def test_full_step_saturates():
    x = np.arange(16.0)
    y = np.where(x < 5, 0.0, 3.0) + np.where(x > 11, 2.0, 0.0)
    m = fit_univariate(x[:, None], y, BoostParams(n_trees=10, shrinkage=1.0, depth=15,
                                                  bag_fraction=1.0, min_node=1))
    tr = m.train_mse
    assert tr[-1] < 1e-20
    assert np.all(np.diff(tr) <= 1e-15)


def _loop_oracle(x, y, v, M):
    """Plain stagewise fitting of stumps found by exhaustive search."""
    r = y - y.mean()
    stumps = []
    for _ in range(M):
        splits = brute_tree(x[:, None], r, 1, 2)
        if not splits:
            break
        _, _, t = splits[0]
        left = x < t
        a, b = r[left].mean(), r[~left].mean()
        stumps.append((t, a, b))
        r = r - v * np.where(left, a, b)
    return lambda z: y.mean() + v * sum(np.where(z < t, a, b) for t, a, b in stumps)


def test_univariate_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(-1, 1, 20))
    y = 2 * x
    m = fit_univariate(x[:, None], y, BoostParams(n_trees=200, shrinkage=0.1, bag_fraction=1.0,
                                                          min_node=2))
    assert m.train_mse[-1] < 0.05 * y.var()
    grid = np.linspace(-1.2, 1.2, 97)
    np.testing.assert_allclose(m.predict(grid[:, None])[:, 0], _loop_oracle(x, y, 0.1, 200)(grid),
                               atol=1e-12)


def test_univariate_subsample_size():
    X, Y = _toy(1, n=101)
    m = fit_univariate(X, Y[:, 0], BoostParams(n_trees=5, min_node=1))
    root_counts = [t.n_samples[0] for t in m.trees]
    assert root_counts == [50] * 5


# -- multivariate ---------------------------------------------------------------

def _alg2_oracle(X, Y, params):
    """Independent covariance-discrepancy booster (numpy covariance, fit_tree)."""
    n = len(X)
    n_bag = int(np.floor(params.bag_fraction * n))
    rng = np.random.default_rng(params.seed)
    R = Y - Y.mean(axis=0)
    qs, Ds = [], []
    for _ in range(params.n_trees):
        rows = np.sort(rng.permutation(n)[:n_bag])
        C = sample_cov(R)
        cand = []
        for q in range(Y.shape[1]):
            t = fit_tree(X, R[:, q], rows, params.depth, params.min_node, params.n_surrogates)
            U = R.copy()
            U[:, q] -= params.shrinkage * t.predict(X)[:, 0]
            cand.append((float(np.sum((C - sample_cov(U)) ** 2)), U))
        D = np.array([c[0] for c in cand])
        q = int(np.argmax(D))
        qs.append(q)
        Ds.append(D)
        R = cand[q][1]
    return qs, np.array(Ds), R


@pytest.mark.parametrize("depth,bag,missing", [(1, 0.5, 0.0), (3, 0.7, 0.1), (2, 1.0, 0.0)])
def test_selection_matches_replay_oracle(depth, bag, missing):
    X, Y = _toy(7, n=90, missing=missing)
    params = BoostParams(n_trees=25, shrinkage=0.1, depth=depth, bag_fraction=bag, min_node=5,
                         seed=3)
    m = fit_multivariate(X, Y, params, keep_residuals=[25])
    qs, Ds, R = _alg2_oracle(X, Y, params)
    assert [s.outcome for s in m.steps] == qs
    np.testing.assert_allclose(np.array([s.candidate_D for s in m.steps]), Ds, rtol=1e-9,
                               atol=1e-14)
    for s in m.steps:
        assert s.D == s.candidate_D.max()
        assert s.D == pytest.approx(float(np.sum(s.raw_discrepancy ** 2)), rel=1e-10)
        np.testing.assert_array_equal(s.raw_discrepancy, s.raw_discrepancy.T)
    np.testing.assert_allclose(m.residuals[25], R, atol=1e-10)


def test_duplicate_outcome_ties_to_first():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 2))
    y = 2 * x[:, 0] + rng.normal(size=200)
    m = fit_multivariate(x, np.column_stack([y, y]), BoostParams(n_trees=30, shrinkage=0.1))
    first = m.steps[0]
    assert first.candidate_D[0] == first.candidate_D[1]
    assert first.outcome == 0


def test_attribution_concentrates_on_true_cells():
    rng = np.random.default_rng(5)
    n = 500
    X = rng.normal(size=(n, 2))
    Y = np.column_stack([0.5 * X[:, 0], 0.5 * X[:, 0], 0.5 * X[:, 1]]) + rng.normal(size=(n, 3))
    m = fit_multivariate(X, Y, BoostParams(n_trees=300, shrinkage=0.05, bag_fraction=1.0))
    acc = {0: np.zeros((3, 3)), 1: np.zeros((3, 3))}
    for s in m.steps:
        acc[s.selected_predictor] += s.raw_discrepancy
    tot = sum(acc.values())
    np.testing.assert_allclose(tot, m.initial_cov - m.final_cov, atol=1e-10)
    A = acc[0].copy()
    np.fill_diagonal(A, -np.inf)
    assert np.unravel_index(np.argmax(A), A.shape) in ((0, 1), (1, 0))
    B = acc[1]
    assert np.unravel_index(np.argmax(np.abs(B)), B.shape) == (2, 2)


@given(st.integers(0, 1000), st.sampled_from([1, 2, 3]), st.sampled_from([0.5, 1.0]),
       st.sampled_from([0.1, 0.01]))
def test_telescoping_and_residual_identity(seed, depth, bag, v):
    X, Y = _toy(seed, n=60, Q=3, missing=0.05)
    M = 40
    m = fit_multivariate(X, Y, BoostParams(n_trees=M, shrinkage=v, depth=depth, bag_fraction=bag,
                                           min_node=3, seed=seed),
                         keep_residuals=[1, M // 2, M])
    total = np.sum([s.raw_discrepancy for s in m.steps], axis=0)
    np.testing.assert_allclose(total, sample_cov(Y) - m.final_cov, atol=1e-8)
    for k in (1, M // 2, M):
        np.testing.assert_allclose(Y - m.predict(X, k), m.residuals[k], atol=1e-8)


def test_monotone_trace_full_bag():
    for seed in range(5):
        X, Y = _toy(seed, n=80)
        m = fit_multivariate(X, Y, BoostParams(n_trees=60, shrinkage=0.3, depth=2,
                                               bag_fraction=1.0, min_node=3))
        assert np.all(np.diff(m.train_mse) <= 1e-12)
        staged = [np.mean((Y - P) ** 2) for P in m.staged_predict(X)]
        np.testing.assert_allclose(staged[1:], m.train_mse, rtol=1e-10)


def test_q1_equivalence():
    for seed in range(4):
        X, Y = _toy(seed, n=100, Q=1, missing=0.1)
        params = BoostParams(n_trees=40, shrinkage=0.1, depth=3, min_node=4, seed=seed)
        a = fit_multivariate(X, Y, params)
        b = fit_univariate(X, Y[:, 0], params)
        assert a.to_json() == b.to_json()


def test_determinism_and_serialization(tmp_path):
    X, Y = _toy(9, missing=0.1)
    d = Dataset.from_arrays(X, Y)
    params = BoostParams(n_trees=30, depth=3, shrinkage=0.1, seed=4)
    a, b = boost_multivariate(d, params), boost_multivariate(d, params)
    assert a.to_json() == b.to_json()
    a.save(tmp_path / "m.json")
    c = MvModel.load(tmp_path / "m.json")
    assert c.to_json() == a.to_json()
    np.testing.assert_array_equal(c.predict(d), a.predict(d))
    obj = json.loads(a.to_json())
    obj["format_version"] = 2
    with pytest.raises(FormatVersionError):
        MvModel.from_dict(obj)


def test_predict_ensemble_contract():
    X, Y = _toy(3)
    d = Dataset.from_arrays(X, Y)
    m = boost_multivariate(d, BoostParams(n_trees=20, shrinkage=0.1), keep_residuals="all")
    np.testing.assert_array_equal(predict_ensemble(m, d, 0), np.tile(m.initial_means, (len(X), 1)))
    np.testing.assert_allclose(predict_ensemble(m, d, 20), Y - m.residuals[20], atol=1e-8)
    with pytest.raises(ValueError):
        predict_ensemble(m, d, 21)
    t = m.truncated(7)
    np.testing.assert_array_equal(t.predict(X), m.predict(X, 7))
    np.testing.assert_allclose(t.final_cov, sample_cov(m.residuals[7]), atol=1e-12)


def test_boost_univariate_by_name_and_errors():
    X, Y = _toy(4)
    d = Dataset.from_arrays(X, Y)
    m = boost_univariate(d, "y2", BoostParams(n_trees=5))
    assert m.outcome_names == ("y2",)
    with pytest.raises(DataError):
        fit_multivariate(X[:1], Y[:1], BoostParams())
    with pytest.raises(DataError):
        fit_multivariate(X, Y, BoostParams(bag_fraction=0.001))


def test_numeric_blowup_reports_step():
    X, Y = _toy(0, n=40)
    with pytest.raises(NumericalError) as ei:
        fit_multivariate(X, Y * 1e200, BoostParams(n_trees=3, shrinkage=1.0))
    assert ei.value.step >= 0


def test_noise_outcomes_do_not_generalize():
    r2 = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(300, 3))
        Y = rng.normal(size=(300, 2))
        d = Dataset.from_arrays(X[:200], Y[:200])
        _, m = cv_select_trees(d, BoostParams(n_trees=200, seed=seed), k=5)
        P = m.predict(X[200:])
        r2.append(1 - np.mean((Y[200:] - P) ** 2) / np.mean((Y[200:] - Y[:200].mean(0)) ** 2))
    assert max(r2) <= 0.05


def test_influence_tracks_committed_outcome():
    X, Y = _toy(6)
    m = fit_multivariate(X, Y, BoostParams(n_trees=1))
    raw = relative_influence(m).raw
    assert np.count_nonzero(raw) == 1
    q = m.steps[0].outcome
    assert raw[m.steps[0].selected_predictor, q] > 0
