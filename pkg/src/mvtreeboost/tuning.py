"""Choosing the number of trees by k-fold cross-validation or a test set."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._seeds import derive_seed
from .boosting import BoostParams, MultivariateStepper, MvModel, _tree_predict, fit_multivariate
from .dataset import Dataset, FoldPlan, make_folds, standardize
from .exceptions import DataError

# stream keys under the master seed
_FOLDS, _FOLD_FIT, _REFIT = 0, 1, 2


def mv_mse(Y, Yhat) -> float:
    """Mean squared error over all n x Q cells."""
    Y = np.asarray(Y, dtype=np.float64)
    Yhat = np.asarray(Yhat, dtype=np.float64)
    if Y.shape != Yhat.shape:
        raise ValueError(f"shape mismatch: {Y.shape} vs {Yhat.shape}")
    if Y.size == 0:
        raise ValueError("empty input")
    if not (np.isfinite(Y).all() and np.isfinite(Yhat).all()):
        raise ValueError("inputs must be finite")
    return float(np.mean((Y - Yhat) ** 2))


@dataclass(frozen=True, eq=False)
class CvResult:
    """Held-out error for every tree count 1..M, per fold and averaged."""

    cv_curve: np.ndarray
    best_M: int
    k: int
    per_fold_curves: np.ndarray
    folds: FoldPlan | None = None

    @property
    def best_error(self) -> float:
        return float(self.cv_curve[self.best_M - 1])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tree_count"] + [f"fold_{f + 1}" for f in range(self.k)] + ["mean"])
        for m in range(self.cv_curve.shape[0]):
            w.writerow([m + 1] + [repr(float(x)) for x in self.per_fold_curves[:, m]]
                       + [repr(float(self.cv_curve[m]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _argmin_first(curve) -> int:
    return int(np.argmin(curve)) + 1


def heldout_curve(X_train, Y_train, X_test, Y_test, params: BoostParams) -> np.ndarray:
    """Test-set multivariate MSE after each of ``params.n_trees`` steps.

    Trees are applied to the test rows as they are committed; none are kept.
    """
    st = MultivariateStepper(X_train, Y_train, params)
    Y_test = np.asarray(Y_test, dtype=np.float64).reshape(len(Y_test), -1)
    XT = np.ascontiguousarray(np.asarray(X_test, dtype=np.float64).T)
    pred = np.tile(st.initial_means, (Y_test.shape[0], 1))
    err = Y_test - pred
    sse = np.sum(err * err, axis=0)
    denom = err.size
    v = params.shrinkage
    out = np.empty(params.n_trees)
    for m in range(params.n_trees):
        q, tree, _, _ = st.step()
        err[:, q] -= v * _tree_predict(tree, XT)
        sse[q] = float(np.dot(err[:, q], err[:, q]))
        out[m] = sse.sum() / denom
    return out


def _fold_arrays(d: Dataset, plan: FoldPlan, f: int, scale):
    tr, te = d.take(plan.train_rows(f)), d.take(plan.test_rows(f))
    if scale is not None:
        tr, sp = standardize(tr, scale)
        te = sp.apply(te)
    return tr.X, tr.Y, te.X, te.Y


def cv_curves(d: Dataset, params: BoostParams, k: int = 5, seed: int = 0,
              standardize_cols=None, global_scaling: bool = False, threads: int = 1):
    """Per-fold held-out curves (k x M) and the fold plan.

    ``standardize_cols`` ("predictors", "outcomes", "all" or column names)
    is fitted on each fold's training rows, or once on all rows with
    ``global_scaling``.
    """
    if params.n_trees < 1:
        raise ValueError("cross-validation needs n_trees >= 1")
    if standardize_cols is not None and global_scaling:
        d, _ = standardize(d, standardize_cols)
        scale = None
    else:
        scale = standardize_cols
    plan = make_folds(d.n_rows, k, derive_seed(seed, _FOLDS))

    def one(f):
        Xtr, Ytr, Xte, Yte = _fold_arrays(d, plan, f, scale)
        if Xtr.shape[0] < 2:
            raise DataError(f"fold {f + 1} leaves fewer than 2 training rows")
        p = params.replace(seed=derive_seed(seed, _FOLD_FIT, f))
        return heldout_curve(Xtr, Ytr, Xte, Yte, p)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            curves = list(ex.map(one, range(k)))
    else:
        curves = [one(f) for f in range(k)]
    return np.vstack(curves), plan


def cv_select_trees(d: Dataset, params: BoostParams | None = None, k: int = 5,
                    seed: int | None = None, standardize_cols=None,
                    global_scaling: bool = False, threads: int = 1, refit: bool = True):
    """Choose the tree count by k-fold CV and refit on all rows.

    Returns ``(CvResult, model)``; the model is fit on every row with
    ``n_trees = best_M`` and a seed derived from the master seed (``None``
    when ``refit`` is false). The master seed defaults to ``params.seed``.
    """
    params = BoostParams() if params is None else params
    seed = params.seed if seed is None else int(seed)
    per_fold, plan = cv_curves(d, params, k, seed, standardize_cols, global_scaling, threads)
    curve = per_fold.mean(axis=0)
    res = CvResult(curve, _argmin_first(curve), k, per_fold, plan)
    if not refit:
        return res, None
    full = d
    sp = None
    if standardize_cols is not None:
        full, sp = standardize(d, standardize_cols)
    model = fit_multivariate(full.X, full.Y,
                             params.replace(n_trees=res.best_M, seed=derive_seed(seed, _REFIT)),
                             d.predictor_names, d.outcome_names)
    model.scaling = sp
    model.categories = dict(d.categories)
    return res, model


def test_select_trees(train: Dataset, test: Dataset, params: BoostParams | None = None):
    """Choose the tree count on a held-out test set.

    Returns ``(curve, best_M, model)`` where the model is the training fit
    truncated to ``best_M`` trees.
    """
    params = BoostParams() if params is None else params
    if params.n_trees < 1:
        raise ValueError("test-set selection needs n_trees >= 1")
    model = fit_multivariate(train.X, train.Y, params, train.predictor_names,
                             train.outcome_names)
    Xte = test.X if test.predictor_names == train.predictor_names else \
        test.X[:, [test.predictor_names.index(n) for n in train.predictor_names]]
    curve = np.array([mv_mse(test.Y, P) for P in model.staged_predict(Xte)][1:])
    best = _argmin_first(curve)
    return curve, best, model.truncated(best)


test_select_trees.__test__ = False
