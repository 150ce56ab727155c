"""Stochastic gradient boosting for one or several continuous outcomes.

The multivariate booster fits, at every step, one candidate tree per outcome
to that outcome's residuals on a shared row subsample. Each candidate is
scored by how much its shrunken update would change the sample covariance
of the full-sample residuals (the sum of squared elementwise changes); only
the best candidate is committed.

Randomness: a fit with seed ``s`` draws its step subsamples, in order, from
``numpy.random.default_rng(s)``; step m uses the m-th draw (a sorted prefix
of a fresh permutation). Nothing else consumes that stream, so candidate
fitting order cannot perturb it.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _splitter as K
from .dataset import Dataset, ScalingParams
from .exceptions import DataError, FormatVersionError, NumericalError
from .tree import Tree, TreeGrower, _tree_from_arrays

FORMAT_VERSION = 1


@dataclass(frozen=True)
class BoostParams:
    """Meta-parameters of a boosting fit."""

    n_trees: int = 100
    shrinkage: float = 0.01
    depth: int = 1
    bag_fraction: float = 0.5
    min_node: int = 10
    n_surrogates: int = 3
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) != self.n_trees or self.n_trees < 0:
            raise ValueError("n_trees must be a non-negative integer")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in (0, 1]")
        if int(self.depth) != self.depth or self.depth < 1:
            raise ValueError("depth must be a positive integer")
        if not 0.0 < self.bag_fraction <= 1.0:
            raise ValueError("bag_fraction must lie in (0, 1]")
        if int(self.min_node) != self.min_node or self.min_node < 1:
            raise ValueError("min_node must be a positive integer")
        if int(self.n_surrogates) != self.n_surrogates or self.n_surrogates < 0:
            raise ValueError("n_surrogates must be a non-negative integer")

    def replace(self, **kw) -> "BoostParams":
        return BoostParams(**{**asdict(self), **kw})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "BoostParams":
        return cls(**obj)


@dataclass(frozen=True, eq=False)
class StepRecord:
    """What happened at one boosting step.

    ``raw_discrepancy`` is the residual covariance before the step minus the
    covariance after it; ``D`` is the sum of its squared elements.
    ``candidate_D`` holds that score for every outcome's candidate tree.
    ``selected_predictor`` is the predictor with the largest influence in
    the committed tree (-1 for a stump).
    """

    step: int
    outcome: int
    tree_id: int
    selected_predictor: int
    raw_discrepancy: np.ndarray
    D: float
    candidate_D: np.ndarray

    def to_dict(self) -> dict:
        return {"step": self.step, "outcome": self.outcome, "tree_id": self.tree_id,
                "selected_predictor": self.selected_predictor,
                "raw_discrepancy": self.raw_discrepancy.tolist(), "D": self.D,
                "candidate_D": self.candidate_D.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "StepRecord":
        return cls(int(obj["step"]), int(obj["outcome"]), int(obj["tree_id"]),
                   int(obj["selected_predictor"]), np.asarray(obj["raw_discrepancy"], float),
                   float(obj["D"]), np.asarray(obj["candidate_D"], float))


@dataclass(eq=False)
class MvModel:
    """Fitted additive tree ensemble.

    Prediction for outcome q is its training mean plus ``shrinkage`` times
    the sum of the trees committed to q.
    """

    params: BoostParams
    predictor_names: tuple
    outcome_names: tuple
    initial_means: np.ndarray
    steps: list = field(default_factory=list)
    trees: list = field(default_factory=list)
    train_mse: np.ndarray = field(default_factory=lambda: np.zeros(0))
    initial_cov: np.ndarray | None = None
    final_cov: np.ndarray | None = None
    scaling: ScalingParams | None = None
    residuals: dict = field(default_factory=dict, repr=False)
    categories: dict = field(default_factory=dict, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.steps)

    @property
    def n_outcomes(self) -> int:
        return len(self.outcome_names)

    @property
    def n_predictors(self) -> int:
        return len(self.predictor_names)

    def truncated(self, n_trees: int) -> "MvModel":
        """The same model restricted to its first ``n_trees`` steps."""
        if not 0 <= n_trees <= self.n_trees:
            raise ValueError(f"n_trees must lie in [0, {self.n_trees}]")
        steps = self.steps[:n_trees]
        cov = self.initial_cov
        if cov is not None and steps:
            cov = cov - np.sum([s.raw_discrepancy for s in steps], axis=0)
        return MvModel(self.params.replace(n_trees=n_trees), self.predictor_names,
                       self.outcome_names, self.initial_means, steps, self.trees[:n_trees],
                       self.train_mse[:n_trees], self.initial_cov, cov, self.scaling,
                       {m: r for m, r in self.residuals.items() if m <= n_trees},
                       dict(self.categories))

    # -- prediction ------------------------------------------------------------

    def _XT(self, X) -> np.ndarray:
        if isinstance(X, Dataset):
            X = _columns_for(X, self.predictor_names)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("predictor matrix must be 2-D")
        if X.shape[1] != self.n_predictors:
            raise DataError(f"expected {self.n_predictors} predictor columns, got {X.shape[1]}")
        return np.ascontiguousarray(X.T)

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        """Predictions (n x Q) using the first ``n_trees`` steps (default all)."""
        n_trees = self.n_trees if n_trees is None else int(n_trees)
        if not 0 <= n_trees <= self.n_trees:
            raise ValueError(f"n_trees={n_trees} exceeds the {self.n_trees} stored steps")
        XT = self._XT(X)
        out = np.tile(self.initial_means, (XT.shape[1], 1))
        v = self.params.shrinkage
        for rec in self.steps[:n_trees]:
            out[:, rec.outcome] += v * _tree_predict(self.trees[rec.tree_id], XT)
        return out

    def staged_predict(self, X):
        """Yield predictions after 0, 1, ..., n_trees steps."""
        XT = self._XT(X)
        out = np.tile(self.initial_means, (XT.shape[1], 1))
        v = self.params.shrinkage
        yield out.copy()
        for rec in self.steps:
            out[:, rec.outcome] += v * _tree_predict(self.trees[rec.tree_id], XT)
            yield out.copy()

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "params": self.params.to_dict(),
            "predictor_names": list(self.predictor_names),
            "outcome_names": list(self.outcome_names),
            "initial_means": self.initial_means.tolist(),
            "initial_cov": None if self.initial_cov is None else self.initial_cov.tolist(),
            "final_cov": None if self.final_cov is None else self.final_cov.tolist(),
            "train_mse": self.train_mse.tolist(),
            "scaling": None if self.scaling is None else json.loads(self.scaling.to_json()),
            "categories": {k: list(v) for k, v in self.categories.items()},
            "steps": [s.to_dict() for s in self.steps],
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MvModel":
        if obj.get("format_version") != FORMAT_VERSION:
            raise FormatVersionError(
                f"unsupported model format_version {obj.get('format_version')!r}")
        opt = lambda k: None if obj.get(k) is None else np.asarray(obj[k], float)  # noqa: E731
        scaling = obj.get("scaling")
        return cls(BoostParams.from_dict(obj["params"]), tuple(obj["predictor_names"]),
                   tuple(obj["outcome_names"]), np.asarray(obj["initial_means"], float),
                   [StepRecord.from_dict(s) for s in obj["steps"]],
                   [Tree.from_dict(t) for t in obj["trees"]],
                   np.asarray(obj["train_mse"], float), opt("initial_cov"), opt("final_cov"),
                   None if scaling is None else ScalingParams.from_json(json.dumps(scaling)),
                   categories={k: list(v) for k, v in obj.get("categories", {}).items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MvModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "MvModel":
        return cls.from_json(Path(path).read_text())


def _columns_for(d: Dataset, names) -> np.ndarray:
    missing = [n for n in names if n not in d.predictor_names]
    if missing:
        raise DataError(f"dataset lacks predictor column(s) {missing}")
    if tuple(names) == d.predictor_names:
        return d.X
    return d.X[:, [d.predictor_names.index(n) for n in names]]


def _tree_predict(tree: Tree, XT) -> np.ndarray:
    leaf = K.apply_tree(XT, tree.feature, tree.threshold, tree.left, tree.right,
                        tree.default_left, tree.surrogate_feature, tree.surrogate_threshold,
                        tree.surrogate_reversed, tree.n_surrogates)
    return tree.value[leaf, 0]


def cov_discrepancy(prev, nxt) -> float:
    """Sum of squared elementwise differences of two covariance matrices."""
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.ndim != 2 or prev.shape[0] != prev.shape[1] or prev.shape != nxt.shape:
        raise ValueError(f"need two equal square matrices, got {prev.shape} and {nxt.shape}")
    for M in (prev, nxt):
        if not np.allclose(M, M.T, rtol=0.0, atol=1e-10):
            raise ValueError("covariance matrices must be symmetric")
    return float(K.sq_discrepancy(np.ascontiguousarray(prev), np.ascontiguousarray(nxt)))


def _selected_predictor(tree: Tree) -> int:
    if tree.is_stump:
        return -1
    return int(np.argmax(tree.influence_vector()))


def _check_inputs(X, Y, params: BoostParams):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DataError("X must be 2-D with one row per outcome row")
    if X.shape[0] < 2:
        raise DataError("need at least 2 rows")
    if X.shape[1] < 1:
        raise DataError("need at least one predictor")
    if not np.isfinite(Y).all():
        raise DataError("outcomes must be complete and finite")
    if np.isinf(X).any():
        raise DataError("predictors must be finite or NaN (missing)")
    n_bag = math.floor(params.bag_fraction * X.shape[0])
    if n_bag < 1:
        raise DataError(f"bag fraction {params.bag_fraction} leaves no rows of {X.shape[0]}")
    return X, np.ascontiguousarray(Y), n_bag


class _Subsampler:
    def __init__(self, n: int, n_bag: int, seed: int):
        self.n = n
        self.n_bag = n_bag
        self.rng = np.random.default_rng(seed)

    def member(self) -> np.ndarray:
        rows = self.rng.permutation(self.n)[: self.n_bag]
        m = np.zeros(self.n, np.int64)
        m[rows] = 1
        return m


class MultivariateStepper:
    """Step-by-step multivariate booster (the engine behind the public fits).

    Each call to :meth:`step` commits one tree and returns
    ``(outcome, tree, raw_discrepancy, candidate_D)``.
    """

    def __init__(self, X, Y, params: BoostParams):
        X, Y, n_bag = _check_inputs(X, Y, params)
        self.params = params
        self.n, self.Q = Y.shape
        self.XT = np.ascontiguousarray(X.T)
        self.order, self.n_valid = K.presort(self.XT)
        self.initial_means = Y.mean(axis=0)
        self.RT = np.ascontiguousarray((Y - self.initial_means).T)
        self.C = K.covariance(self.RT) if self.n > 1 else np.zeros((self.Q, self.Q))
        if not np.isfinite(self.C).all():
            raise NumericalError("outcome covariance is not finite", step=0)
        self.initial_cov = self.C.copy()
        self.sub = _Subsampler(self.n, n_bag, params.seed)
        self.m = 0

    def step(self):
        p = self.params
        self.m += 1
        member = self.sub.member()
        q, D, C_new, arrs, finite = K.mv_step(
            self.XT, self.RT, self.C, self.order, self.n_valid, member, self.sub.n_bag,
            p.depth, p.min_node, p.shrinkage, p.n_surrogates)
        if not finite or not np.isfinite(C_new).all():
            raise NumericalError(f"non-finite residuals at step {self.m}", step=self.m)
        raw = self.C - C_new
        self.C = C_new
        return int(q), _tree_from_arrays(arrs, self.XT.shape[0]), raw, D

    def mse(self) -> float:
        return float(np.mean(self.RT * self.RT))


def _names(Xn, Yn, p, q):
    pn = tuple(Xn) if Xn is not None else tuple(f"x{j + 1}" for j in range(p))
    on = tuple(Yn) if Yn is not None else tuple(f"y{k + 1}" for k in range(q))
    return pn, on


def _record_checkpoint(model: MvModel, keep, m: int, RT) -> None:
    if keep == "all" or (keep and m in keep):
        model.residuals[m] = RT.T.copy()


def fit_multivariate(X, Y, params: BoostParams, predictor_names=None, outcome_names=None,
                     keep_residuals=()) -> MvModel:
    """Array-level multivariate boosting (see :func:`boost_multivariate`)."""
    st = MultivariateStepper(X, Y, params)
    pn, on = _names(predictor_names, outcome_names, st.XT.shape[0], st.Q)
    model = MvModel(params, pn, on, st.initial_means, initial_cov=st.initial_cov)
    _record_checkpoint(model, keep_residuals, 0, st.RT)
    trace = np.empty(params.n_trees)
    for m in range(1, params.n_trees + 1):
        q, tree, raw, D = st.step()
        model.trees.append(tree)
        model.steps.append(StepRecord(m, q, m - 1, _selected_predictor(tree), raw,
                                      float(D[q]), D))
        trace[m - 1] = st.mse()
        _record_checkpoint(model, keep_residuals, m, st.RT)
    model.train_mse = trace
    model.final_cov = st.C.copy()
    return model


def fit_univariate(X, y, params: BoostParams, predictor_names=None, outcome_name=None,
                   keep_residuals=()) -> MvModel:
    """Array-level single-outcome boosting (see :func:`boost_univariate`)."""
    X, Y, n_bag = _check_inputs(X, y, params)
    if Y.shape[1] != 1:
        raise DataError("univariate boosting takes exactly one outcome column")
    n = X.shape[0]
    grower = TreeGrower(X, params.min_node, params.n_surrogates)
    mean = Y.mean(axis=0)
    r = np.ascontiguousarray(Y[:, 0] - mean[0])
    sub = _Subsampler(n, n_bag, params.seed)
    pn, on = _names(predictor_names, None if outcome_name is None else [outcome_name],
                    X.shape[1], 1)
    var0 = float(K.covariance(r[None, :])[0, 0])
    if not math.isfinite(var0):
        raise NumericalError("outcome variance is not finite", step=0)
    model = MvModel(params, pn, on, mean, initial_cov=np.array([[var0]]))
    _record_checkpoint(model, keep_residuals, 0, r[None, :])
    trace = np.empty(params.n_trees)
    prev_var = var0
    for m in range(1, params.n_trees + 1):
        rows = np.flatnonzero(sub.member())
        tree = grower.grow(r, rows, params.depth, check=False)
        r = r - params.shrinkage * _tree_predict(tree, grower.XT)
        var = float(K.covariance(r[None, :])[0, 0])
        if not (np.isfinite(r).all() and math.isfinite(var)):
            raise NumericalError(f"non-finite residuals at step {m}", step=m)
        raw = np.array([[prev_var - var]])
        prev_var = var
        model.trees.append(tree)
        model.steps.append(StepRecord(m, 0, m - 1, _selected_predictor(tree), raw,
                                      float(raw[0, 0] ** 2), np.array([raw[0, 0] ** 2])))
        trace[m - 1] = float(np.mean(r * r))
        _record_checkpoint(model, keep_residuals, m, r[None, :])
    model.train_mse = trace
    model.final_cov = np.array([[prev_var]])
    return model


def boost_multivariate(d: Dataset, params: BoostParams | None = None,
                       keep_residuals=()) -> MvModel:
    """Boost all outcomes of ``d`` with covariance-discrepancy tree selection.

    ``keep_residuals`` lists steps (0 = before any tree) whose full residual
    matrix is kept in ``model.residuals``; ``"all"`` keeps every step.
    """
    params = BoostParams() if params is None else params
    model = fit_multivariate(d.X, d.Y, params, d.predictor_names, d.outcome_names,
                             keep_residuals)
    model.categories = dict(d.categories)
    return model


def boost_univariate(d: Dataset, outcome, params: BoostParams | None = None,
                     keep_residuals=()) -> MvModel:
    """Boost a single outcome (index or name) of ``d``."""
    params = BoostParams() if params is None else params
    q = d.outcome_names.index(outcome) if isinstance(outcome, str) else int(outcome)
    if not 0 <= q < d.n_outcomes:
        raise DataError(f"outcome index {q} out of range")
    model = fit_univariate(d.X, d.Y[:, q], params, d.predictor_names, d.outcome_names[q],
                           keep_residuals)
    model.categories = dict(d.categories)
    return model


def predict_ensemble(model: MvModel, d, n_trees: int | None = None) -> np.ndarray:
    """Predictions of the first ``n_trees`` steps for a Dataset or matrix."""
    return model.predict(d, n_trees)
