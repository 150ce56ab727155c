"""scikit-learn compatible wrappers around the array-level fitting functions."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .baselines import WilksOLS, bag_mvcart, fit_mvcart
from .boosting import BoostParams, fit_multivariate
from .interpret import relative_influence
from .tuning import cv_curves


def _check_xy(X, y):
    X, y = check_X_y(X, y, ensure_all_finite="allow-nan", multi_output=True,
                     y_numeric=True, dtype=np.float64)
    return X, y


def _check_x(est, X):
    check_is_fitted(est)
    X = check_array(X, ensure_all_finite="allow-nan", dtype=np.float64)
    if X.shape[1] != est.n_features_in_:
        raise ValueError(f"X has {X.shape[1]} features; expected {est.n_features_in_}")
    return X


def _shape_out(pred, y_ndim):
    return pred[:, 0] if y_ndim == 1 else pred


class MultivariateBoostingRegressor(RegressorMixin, BaseEstimator):
    """Covariance-discrepancy boosting of several outcomes.

    With ``cv_folds`` set, the number of trees is chosen by k-fold CV up to
    ``n_trees`` and the final model is refit with that count.
    """

    def __init__(self, n_trees=100, shrinkage=0.01, depth=1, bag_fraction=0.5, min_node=10,
                 n_surrogates=3, cv_folds=None, random_state=0):
        self.n_trees = n_trees
        self.shrinkage = shrinkage
        self.depth = depth
        self.bag_fraction = bag_fraction
        self.min_node = min_node
        self.n_surrogates = n_surrogates
        self.cv_folds = cv_folds
        self.random_state = random_state

    def _params(self, n_trees=None):
        return BoostParams(n_trees=self.n_trees if n_trees is None else n_trees,
                           shrinkage=self.shrinkage, depth=self.depth,
                           bag_fraction=self.bag_fraction, min_node=self.min_node,
                           n_surrogates=self.n_surrogates, seed=int(self.random_state or 0))

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self._y_ndim = y.ndim
        Y = y.reshape(len(y), -1)
        params = self._params()
        self.cv_curve_ = None
        if self.cv_folds:
            from .dataset import Dataset
            curves, _ = cv_curves(Dataset.from_arrays(X, Y), params, int(self.cv_folds),
                                  params.seed)
            self.cv_curve_ = curves.mean(axis=0)
            params = params.replace(n_trees=int(np.argmin(self.cv_curve_)) + 1)
        self.model_ = fit_multivariate(X, Y, params)
        self.n_features_in_ = X.shape[1]
        self.n_trees_ = self.model_.n_trees
        return self

    def predict(self, X):
        X = _check_x(self, X)
        return _shape_out(self.model_.predict(X), self._y_ndim)

    @property
    def feature_importances_(self):
        check_is_fitted(self)
        g = relative_influence(self.model_).global_
        return g / g.sum() if g.sum() > 0 else g


class MultivariateTreeRegressor(RegressorMixin, BaseEstimator):
    """Single multivariate regression tree, cp-limited and CV-pruned."""

    def __init__(self, cp=0.01, k_prune=10, min_node=10, n_surrogates=3, random_state=0):
        self.cp = cp
        self.k_prune = k_prune
        self.min_node = min_node
        self.n_surrogates = n_surrogates
        self.random_state = random_state

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self._y_ndim = y.ndim
        self.result_ = fit_mvcart(X, y.reshape(len(y), -1), self.cp, self.k_prune,
                                  int(self.random_state or 0), self.min_node, self.n_surrogates)
        self.tree_ = self.result_.tree
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = _check_x(self, X)
        return _shape_out(self.tree_.predict(X), self._y_ndim)

    @property
    def feature_importances_(self):
        check_is_fitted(self)
        v = self.tree_.influence_vector(self.n_features_in_)
        return v / v.sum() if v.sum() > 0 else v


class BaggedMultivariateTreeRegressor(RegressorMixin, BaseEstimator):
    """Average of multivariate trees grown on bootstrap resamples."""

    def __init__(self, n_estimators=100, cp=0.01, min_node=10, n_surrogates=3,
                 random_state=0, n_jobs=1):
        self.n_estimators = n_estimators
        self.cp = cp
        self.min_node = min_node
        self.n_surrogates = n_surrogates
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self._y_ndim = y.ndim
        self.ensemble_ = bag_mvcart(X, y.reshape(len(y), -1), self.n_estimators, self.cp,
                                    int(self.random_state or 0), self.min_node,
                                    self.n_surrogates, int(self.n_jobs or 1))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = _check_x(self, X)
        return _shape_out(self.ensemble_.predict(X), self._y_ndim)

    @property
    def feature_importances_(self):
        check_is_fitted(self)
        v = self.ensemble_.influence
        return v / v.sum() if v.sum() > 0 else v


class WilksSelector(TransformerMixin, BaseEstimator):
    """Keep predictors whose single-predictor Wilks' lambda test has p < alpha.

    ``predict`` uses an OLS fit on the kept predictors.
    """

    def __init__(self, alpha=0.05):
        self.alpha = alpha

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self._y_ndim = y.ndim
        self.ols_ = WilksOLS(alpha=self.alpha).fit(X, y.reshape(len(y), -1))
        self.p_values_ = self.ols_.screen.p_value
        self.support_ = self.p_values_ < self.alpha
        self.n_features_in_ = X.shape[1]
        return self

    def get_support(self, indices=False):
        check_is_fitted(self)
        return np.flatnonzero(self.support_) if indices else self.support_.copy()

    def transform(self, X):
        X = _check_x(self, X)
        return X[:, self.support_]

    def predict(self, X):
        X = _check_x(self, X)
        return _shape_out(self.ols_.predict(X), self._y_ndim)
