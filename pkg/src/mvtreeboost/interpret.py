"""Interpreting a fitted ensemble: influence, permutation importance,
covariance explained, partial dependence and departures from additivity."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.cluster import hierarchy
from scipy.spatial.distance import pdist

from .boosting import MvModel, _columns_for, _tree_predict
from .dataset import Dataset
from .exceptions import DataError


def _write(rows, path):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _num(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Influence
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InfluenceTable:
    """Per-predictor SSE reductions split by the outcome each tree was fit to.

    ``raw[j, q]`` sums the reductions from splits on predictor j in trees
    committed to outcome q; ``relative`` rescales each column to percent,
    ``global_`` sums each row and ``global_relative`` is that sum as a percent
    of the total.
    """

    raw: np.ndarray
    predictor_names: tuple
    outcome_names: tuple

    @property
    def relative(self) -> np.ndarray:
        tot = self.raw.sum(axis=0)
        out = np.zeros_like(self.raw)
        nz = tot > 0
        out[:, nz] = 100.0 * self.raw[:, nz] / tot[nz]
        return out

    @property
    def global_(self) -> np.ndarray:
        return self.raw.sum(axis=1)

    @property
    def global_relative(self) -> np.ndarray:
        g = self.global_
        tot = g.sum()
        return 100.0 * g / tot if tot > 0 else np.zeros_like(g)

    def to_csv(self, path=None, kind: str = "relative") -> str:
        if kind not in ("relative", "raw"):
            raise ValueError("kind must be 'relative' or 'raw'")
        M = self.relative if kind == "relative" else self.raw
        rows = [["predictor", *self.outcome_names, "global"]]
        g = self.global_relative if kind == "relative" else self.global_
        for j, name in enumerate(self.predictor_names):
            rows.append([name, *map(_num, M[j]), _num(g[j])])
        return _write(rows, path)


def relative_influence(model: MvModel) -> InfluenceTable:
    raw = np.zeros((model.n_predictors, model.n_outcomes))
    for rec in model.steps:
        raw[:, rec.outcome] += model.trees[rec.tree_id].influence_vector(model.n_predictors)
    return InfluenceTable(raw, model.predictor_names, model.outcome_names)


# ---------------------------------------------------------------------------
# Permutation importance
# ---------------------------------------------------------------------------

def _tree_uses(tree, j: int) -> bool:
    internal = tree.feature >= 0
    if np.any(tree.feature[internal] == j):
        return True
    for node in np.flatnonzero(internal):
        if np.any(tree.surrogate_feature[node, : tree.n_surrogates[node]] == j):
            return True
    return False


def _default_permuter(rng, n):
    return rng.permutation(n)


def permutation_importance(model: MvModel, d, Y=None, n_perm: int = 10, seed: int = 0,
                           permuter=None) -> np.ndarray:
    """Mean increase in per-outcome MSE after permuting each predictor (p x Q).

    ``d`` is a Dataset (its outcomes are the truth) or a predictor matrix
    with ``Y`` given. ``permuter(rng, n)`` returns a permutation of
    ``range(n)``; by default a uniform random one. Only trees that split on
    (or use a surrogate of) the permuted predictor are re-evaluated, so an
    unused predictor has exactly zero importance.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    if isinstance(d, Dataset):
        X = _columns_for(d, model.predictor_names)
        Y = d.Y if Y is None else Y
    else:
        X = np.asarray(d, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
    permuter = _default_permuter if permuter is None else permuter
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    XT = np.ascontiguousarray(X.T)
    base = model.predict(X)
    base_mse = np.mean((Y - base) ** 2, axis=0)
    v = model.params.shrinkage
    out = np.zeros((model.n_predictors, model.n_outcomes))
    for j in range(model.n_predictors):
        users = [r for r in model.steps if _tree_uses(model.trees[r.tree_id], j)]
        base_parts = [_tree_predict(model.trees[r.tree_id], XT) for r in users]
        acc = np.zeros(model.n_outcomes)
        for _ in range(n_perm):
            perm = np.asarray(permuter(rng, n))
            if not users:
                continue
            XTp = XT.copy()
            XTp[j] = XT[j, perm]
            pred = base.copy()
            for r, b in zip(users, base_parts):
                pred[:, r.outcome] += v * (_tree_predict(model.trees[r.tree_id], XTp) - b)
            acc += np.mean((Y - pred) ** 2, axis=0) - base_mse
        out[j] = acc / n_perm
    return out


# ---------------------------------------------------------------------------
# Covariance explained
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CovExMatrix:
    """Covariance explained per outcome pair (rows) and predictor (columns).

    Rows are the upper triangle of the Q x Q matrix including the diagonal,
    in row-major order, labelled ``"y_a:y_b"``.
    """

    values: np.ndarray
    row_labels: tuple
    col_labels: tuple
    pairs: tuple

    def to_csv(self, path=None) -> str:
        rows = [["pair", *self.col_labels]]
        for i, lab in enumerate(self.row_labels):
            rows.append([lab, *map(_num, self.values[i])])
        return _write(rows, path)

    def pair_matrix(self, j: int) -> np.ndarray:
        """Full symmetric Q x Q matrix for predictor column ``j``."""
        Q = max(b for _, b in self.pairs) + 1
        M = np.zeros((Q, Q))
        for i, (a, b) in enumerate(self.pairs):
            M[a, b] = M[b, a] = self.values[i, j]
        return M


def covex_matrix(model: MvModel) -> CovExMatrix:
    """Sum each step's covariance change into its selected predictor's column."""
    Q, p = model.n_outcomes, model.n_predictors
    acc = np.zeros((p, Q, Q))
    for rec in model.steps:
        if rec.selected_predictor >= 0:
            acc[rec.selected_predictor] += rec.raw_discrepancy
    pairs = tuple((a, b) for a in range(Q) for b in range(a, Q))
    values = np.array([[acc[j, a, b] for j in range(p)] for a, b in pairs]).reshape(len(pairs), p)
    labels = tuple(f"{model.outcome_names[a]}:{model.outcome_names[b]}" for a, b in pairs)
    return CovExMatrix(values, labels, tuple(model.predictor_names), pairs)


@dataclass(frozen=True, eq=False)
class Clustering:
    """Dendrogram leaf order and the scipy-style merge table of one axis."""

    order: np.ndarray
    merges: np.ndarray
    labels: tuple

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    @property
    def ordered_labels(self) -> tuple:
        return tuple(self.labels[i] for i in self.order)


_METRICS = {"euclidean": "euclidean", "manhattan": "cityblock"}


def cluster_covex(c: CovExMatrix, metric: str = "euclidean", linkage: str = "average",
                  axis: str = "both") -> dict:
    """Agglomerative clustering of covex rows and/or columns.

    Returns ``{"rows": Clustering, "cols": Clustering}`` restricted to the
    requested axis. Merge ties follow scipy's deterministic ordering.
    """
    if metric not in _METRICS:
        raise ValueError(f"metric must be one of {sorted(_METRICS)}")
    if linkage not in ("average", "complete"):
        raise ValueError("linkage must be 'average' or 'complete'")
    if axis not in ("rows", "cols", "both"):
        raise ValueError("axis must be 'rows', 'cols' or 'both'")
    out = {}
    for name in ("rows", "cols"):
        if axis not in (name, "both"):
            continue
        data = c.values if name == "rows" else c.values.T
        labels = c.row_labels if name == "rows" else c.col_labels
        if data.shape[0] < 2:
            raise ValueError(f"cannot cluster a single {name[:-1]}")
        Z = hierarchy.linkage(pdist(data, _METRICS[metric]), method=linkage)
        out[name] = Clustering(hierarchy.leaves_list(Z), Z, tuple(labels))
    return out


# ---------------------------------------------------------------------------
# Partial dependence
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PartialDependence:
    """Grid axes and averaged predictions (shape g or g x g)."""

    predictors: tuple
    outcome: str
    axes: tuple
    values: np.ndarray

    def to_csv(self, path=None) -> str:
        rows = [[*self.predictors, "value"]]
        if len(self.axes) == 1:
            for z, val in zip(self.axes[0], self.values):
                rows.append([_num(z), _num(val)])
        else:
            for i, za in enumerate(self.axes[0]):
                for k, zb in enumerate(self.axes[1]):
                    rows.append([_num(za), _num(zb), _num(self.values[i, k])])
        return _write(rows, path)


def _resolve_predictor(model: MvModel, j) -> int:
    if isinstance(j, str):
        if j not in model.predictor_names:
            raise DataError(f"unknown predictor {j!r}")
        return model.predictor_names.index(j)
    j = int(j)
    if not 0 <= j < model.n_predictors:
        raise DataError(f"predictor index {j} out of range")
    return j


def _resolve_outcome(model: MvModel, q) -> int:
    if isinstance(q, str):
        if q not in model.outcome_names:
            raise DataError(f"unknown outcome {q!r}")
        return model.outcome_names.index(q)
    q = int(q)
    if not 0 <= q < model.n_outcomes:
        raise DataError(f"outcome index {q} out of range")
    return q


def _tree_thresholds(tree, j: int) -> np.ndarray:
    """Every threshold at which routing can depend on predictor ``j``."""
    internal = np.flatnonzero(tree.feature >= 0)
    thr = [tree.threshold[k] for k in internal if tree.feature[k] == j]
    for k in internal:
        ns = tree.n_surrogates[k]
        sel = tree.surrogate_feature[k, :ns] == j
        thr.extend(tree.surrogate_threshold[k, :ns][sel].tolist())
    return np.unique(np.asarray(thr, dtype=np.float64))


def _pd_values(model: MvModel, XT, js, q: int, grids) -> np.ndarray:
    """Exact mean prediction over rows for every grid combination.

    A tree's routing depends on a grid coordinate only through the bin it
    falls in among that tree's thresholds on the predictor, so each tree is
    evaluated once per distinct combination of per-axis bins.
    """
    shape = tuple(len(g) for g in grids)
    total = np.full(shape, float(model.initial_means[q]))
    v = model.params.shrinkage
    const = 0.0
    XTc = XT.copy()
    for rec in model.steps:
        if rec.outcome != q:
            continue
        tree = model.trees[rec.tree_id]
        thr = [_tree_thresholds(tree, j) for j in js]
        if all(t.size == 0 for t in thr):
            const += v * float(np.mean(_tree_predict(tree, XT)))
            continue
        reps, invs = [], []
        for t, g in zip(thr, grids):
            _, first, inv = np.unique(np.searchsorted(t, g, side="right"),
                                      return_index=True, return_inverse=True)
            reps.append(g[first])
            invs.append(inv.ravel())
        cells = np.empty(tuple(len(r) for r in reps))
        for idx in np.ndindex(cells.shape):
            for a, j in enumerate(js):
                XTc[j] = reps[a][idx[a]]
            cells[idx] = np.mean(_tree_predict(tree, XTc))
        total += v * cells[np.ix_(*invs)]
    return total + const


def _grid(x: np.ndarray, grid_size: int) -> np.ndarray:
    x = x[~np.isnan(x)]
    if x.size == 0:
        raise DataError("predictor has no observed values")
    return np.linspace(x.min(), x.max(), grid_size)


def partial_dependence(model: MvModel, predictors, outcome, d, grid_size: int = 50,
                       pdp_sample: int | None = None, seed: int = 0) -> PartialDependence:
    """Partial dependence of ``outcome`` on one or two predictors.

    The grid spans the observed range of each named predictor in
    ``grid_size`` even steps; each value is the mean prediction over all
    rows of ``d`` (or ``pdp_sample`` of them, drawn with ``seed``) with the
    named predictors overwritten.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    if isinstance(predictors, (int, str, np.integer)):
        predictors = [predictors]
    js = [_resolve_predictor(model, j) for j in predictors]
    if not 1 <= len(js) <= 2 or len(set(js)) != len(js):
        raise ValueError("need one or two distinct predictors")
    q = _resolve_outcome(model, outcome)
    X = _columns_for(d, model.predictor_names) if isinstance(d, Dataset) else \
        np.asarray(d, dtype=np.float64)
    grids = [_grid(X[:, j], grid_size) for j in js]
    if pdp_sample is not None and pdp_sample < X.shape[0]:
        rows = np.sort(np.random.default_rng(seed).choice(X.shape[0], pdp_sample, replace=False))
        X = X[rows]
    XT = np.ascontiguousarray(X.T)
    vals = _pd_values(model, XT, js, q, grids)
    return PartialDependence(tuple(model.predictor_names[j] for j in js),
                             model.outcome_names[q], tuple(grids), vals)


# ---------------------------------------------------------------------------
# Departure from additivity
# ---------------------------------------------------------------------------

def departure_score(za, zb, values) -> tuple[float, float]:
    """Planar least-squares fit of a 2-D grid surface.

    Returns ``(1 - R^2, mean squared residual)``. A surface that is constant
    (up to rounding) scores ``(0, 0)``.
    """
    A, B = np.meshgrid(za, zb, indexing="ij")
    y = np.asarray(values, dtype=np.float64).ravel()
    D = np.column_stack([np.ones(y.size), A.ravel(), B.ravel()])
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    resid = y - D @ coef
    rss = float(resid @ resid)
    yc = y - y.mean()
    tss = float(yc @ yc)
    if np.ptp(y) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))) or tss == 0.0:
        return 0.0, 0.0
    return min(max(rss / tss, 0.0), 1.0), rss / y.size


@dataclass(frozen=True, eq=False)
class NonlinTable:
    """Predictor pairs ranked by departure from a planar partial dependence."""

    outcome: str
    pairs: tuple
    scores: np.ndarray
    mean_sq_resid: np.ndarray

    def to_csv(self, path=None) -> str:
        rows = [["predictor_a", "predictor_b", "score", "mean_sq_resid"]]
        for (a, b), s, r in zip(self.pairs, self.scores, self.mean_sq_resid):
            rows.append([a, b, _num(s), _num(r)])
        return _write(rows, path)


def nonlin_scan(model: MvModel, d, outcome, pairs="all", grid_size: int = 100,
                pdp_sample: int | None = None, seed: int = 0,
                rank_by: str = "resid") -> NonlinTable:
    """Score predictor pairs by how far their joint partial dependence is
    from a plane.

    ``pairs`` is ``"all"``, an int k (all pairs among the k predictors with
    the largest influence on ``outcome``) or an explicit list of pairs.
    ``rank_by`` chooses the sort key: ``"resid"`` (mean squared residual of
    the planar fit, in outcome units) or ``"score"`` (1 - R^2 of that fit).
    The normalized score inflates nearly flat surfaces of weak pairs, so
    the residual is the default key; both columns are always reported.
    """
    if model.n_predictors < 2:
        raise ValueError("need at least two predictors")
    if rank_by not in ("score", "resid"):
        raise ValueError("rank_by must be 'score' or 'resid'")
    q = _resolve_outcome(model, outcome)
    if isinstance(pairs, str):
        if pairs != "all":
            raise ValueError("pairs must be 'all', an int or a list of pairs")
        cand = list(range(model.n_predictors))
        pair_idx = [(a, b) for i, a in enumerate(cand) for b in cand[i + 1:]]
    elif isinstance(pairs, (int, np.integer)):
        infl = relative_influence(model).raw[:, q]
        top = sorted(np.argsort(-infl, kind="stable")[: max(int(pairs), 2)].tolist())
        pair_idx = [(a, b) for i, a in enumerate(top) for b in top[i + 1:]]
    else:
        pair_idx = [(_resolve_predictor(model, a), _resolve_predictor(model, b)) for a, b in pairs]
    X = _columns_for(d, model.predictor_names) if isinstance(d, Dataset) else \
        np.asarray(d, dtype=np.float64)
    grids = {j: _grid(X[:, j], grid_size) for pr in pair_idx for j in pr}
    if pdp_sample is not None and pdp_sample < X.shape[0]:
        rows = np.sort(np.random.default_rng(seed).choice(X.shape[0], pdp_sample, replace=False))
        X = X[rows]
    XT = np.ascontiguousarray(X.T)
    res = []
    for a, b in pair_idx:
        vals = _pd_values(model, XT, [a, b], q, [grids[a], grids[b]])
        s, r = departure_score(grids[a], grids[b], vals)
        res.append((a, b, s, r))
    key = 2 if rank_by == "score" else 3
    res.sort(key=lambda t: (-t[key], t[0], t[1]))
    names = model.predictor_names
    return NonlinTable(model.outcome_names[q], tuple((names[a], names[b]) for a, b, _, _ in res),
                       np.array([t[2] for t in res]), np.array([t[3] for t in res]))
