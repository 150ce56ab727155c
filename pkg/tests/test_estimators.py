import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from mvtreeboost import estimators as E
from mvtreeboost.boosting import BoostParams, fit_multivariate


def _data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    Y = np.column_stack([X[:, 0] + (X[:, 1] > 0), X[:, 0] - X[:, 2]]) + 0.3 * rng.normal(size=(n, 2))
    return X, Y


ALL = [E.MultivariateBoostingRegressor(n_trees=40, shrinkage=0.1, min_node=5),
       E.MultivariateTreeRegressor(k_prune=3, min_node=5),
       E.BaggedMultivariateTreeRegressor(n_estimators=5, min_node=5),
       E.WilksSelector()]


@pytest.mark.parametrize("est", ALL, ids=lambda e: type(e).__name__)
def test_sklearn_contract(est):
    X, Y = _data()
    c = clone(est)
    assert c.get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        c.predict(X)
    c.fit(X, Y)
    assert c.predict(X).shape == (200, 2)
    c.fit(X, Y[:, 0])
    assert c.predict(X).shape == (200,)
    with pytest.raises(ValueError):
        c.predict(X[:, :3])
    if hasattr(c, "feature_importances_"):
        fi = c.feature_importances_
        assert fi.shape == (4,) and fi.sum() == pytest.approx(1.0)
    assert c.n_features_in_ == 4


def test_boosting_wrapper_matches_core():
    X, Y = _data()
    est = E.MultivariateBoostingRegressor(n_trees=30, shrinkage=0.1, depth=2, random_state=3).fit(X, Y)
    core = fit_multivariate(X, Y, BoostParams(n_trees=30, shrinkage=0.1, depth=2, seed=3))
    np.testing.assert_array_equal(est.predict(X), core.predict(X))
    assert est.score(X, Y) > 0.5


def test_boosting_cv_chooses_tree_count():
    X, Y = _data(150)
    est = E.MultivariateBoostingRegressor(n_trees=80, shrinkage=0.1, cv_folds=3).fit(X, Y)
    assert est.cv_curve_.shape == (80,)
    assert est.n_trees_ == int(np.argmin(est.cv_curve_)) + 1


def test_missing_values_in_trees_and_cross_val():
    X, Y = _data()
    X[::7, 1] = np.nan
    for est in ALL[:3]:
        assert np.isfinite(clone(est).fit(X, Y).predict(X)).all()
    s = cross_val_score(E.MultivariateBoostingRegressor(n_trees=30, shrinkage=0.1), X, Y, cv=3)
    assert s.shape == (3,)


def test_wilks_selector_support_and_transform():
    X, Y = _data()
    w = E.WilksSelector(alpha=0.01).fit(X, Y)
    assert w.get_support()[0] and w.get_support()[2]
    np.testing.assert_array_equal(w.transform(X), X[:, w.get_support()])
    np.testing.assert_array_equal(w.get_support(indices=True), np.flatnonzero(w.support_))
