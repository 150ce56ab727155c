"""Depth-constrained regression trees with surrogate splits.

Trees are grown best-first: each of up to ``depth`` splits is the single
(leaf, predictor, threshold) candidate with the largest reduction in the
summed squared error of all target columns. ``depth`` therefore counts
splits, not levels. Thresholds are midpoints between consecutive distinct
values; a row goes left when its value is strictly below the threshold.

Near-ties are resolved deterministically: candidates whose gain is within a
relative ``TIE_RTOL`` of the best are treated as equal and the one with the
lowest predictor index, then lowest threshold, then earliest-created leaf
wins.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _splitter as K
from .exceptions import DataError, FormatVersionError

FORMAT_VERSION = 1
TIE_RTOL = K.TIE_RTOL
MIN_GAIN_RTOL = K.MIN_GAIN_RTOL


def _sse(Y):
    if Y.shape[0] == 0:
        return 0.0
    C = Y - Y.mean(axis=0)
    return float(np.sum(C * C))


@dataclass(frozen=True, eq=False)
class Tree:
    """Array representation of a fitted tree.

    Node 0 is the root. ``feature[i] == -1`` marks a leaf. Every node stores
    the target means of the training rows routed to it in ``value``;
    ``improvement`` holds the realised SSE reduction of each split (zero at
    leaves). ``split_order`` lists internal nodes in the order they were
    split.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    surrogate_feature: np.ndarray
    surrogate_threshold: np.ndarray
    surrogate_reversed: np.ndarray
    n_surrogates: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    improvement: np.ndarray
    split_order: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_splits(self) -> int:
        return int(np.sum(self.feature >= 0))

    @property
    def n_leaves(self) -> int:
        return self.n_nodes - self.n_splits

    @property
    def is_stump(self) -> bool:
        return self.feature[0] < 0

    @property
    def n_targets(self) -> int:
        return self.value.shape[1]

    @property
    def sse_reduction_by_predictor(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for node in self.split_order:
            j = int(self.feature[node])
            out[j] = out.get(j, 0.0) + float(self.improvement[node])
        return dict(sorted(out.items()))

    def influence_vector(self, n_features=None) -> np.ndarray:
        n_features = self.n_features if n_features is None else n_features
        out = np.zeros(n_features)
        internal = self.feature >= 0
        np.add.at(out, self.feature[internal], self.improvement[internal])
        return out

    def apply(self, X) -> np.ndarray:
        X = _as_predictors(X)
        if X.shape[1] != self.n_features:
            raise DataError(f"tree was grown on {self.n_features} predictors; data has "
                            f"{X.shape[1]} columns")
        return K.apply_tree(np.ascontiguousarray(X.T), self.feature, self.threshold, self.left, self.right,
                            self.default_left, self.surrogate_feature,
                            self.surrogate_threshold, self.surrogate_reversed,
                            self.n_surrogates)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def pruned(self, collapse) -> "Tree":
        """Copy with every node in ``collapse`` turned into a leaf."""
        collapse = set(int(c) for c in collapse)
        keep, stack = [], [0]
        while stack:
            node = stack.pop()
            keep.append(node)
            if self.feature[node] >= 0 and node not in collapse:
                stack.extend((int(self.right[node]), int(self.left[node])))
        keep.sort()
        remap = {old: new for new, old in enumerate(keep)}
        idx = np.asarray(keep)
        is_leaf = np.array([self.feature[k] < 0 or k in collapse for k in keep])
        feature = np.where(is_leaf, -1, self.feature[idx])
        left = np.array([-1 if lf else remap[int(self.left[k])] for k, lf in zip(keep, is_leaf)],
                        dtype=np.int64)
        right = np.array([-1 if lf else remap[int(self.right[k])] for k, lf in zip(keep, is_leaf)],
                         dtype=np.int64)
        nsur = np.where(is_leaf, 0, self.n_surrogates[idx])
        order = np.array([remap[int(k)] for k in self.split_order
                          if int(k) in remap and not is_leaf[remap[int(k)]]], dtype=np.int64)
        return Tree(feature.astype(np.int64), self.threshold[idx], left, right,
                    self.default_left[idx], self.surrogate_feature[idx],
                    self.surrogate_threshold[idx], self.surrogate_reversed[idx],
                    nsur.astype(np.int64), self.value[idx], self.n_samples[idx],
                    np.where(is_leaf, 0.0, self.improvement[idx]), order, self.n_features)

    def subtree_nodes(self, node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            k = stack.pop()
            out.append(k)
            if self.feature[k] >= 0:
                stack.extend((int(self.left[k]), int(self.right[k])))
        return out

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            node = {"id": i, "value": self.value[i].tolist(), "n": int(self.n_samples[i])}
            if self.feature[i] >= 0:
                ns = int(self.n_surrogates[i])
                node.update({
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "missing": "left" if self.default_left[i] else "right",
                    "improvement": float(self.improvement[i]),
                    "surrogates": [
                        {"feature": int(self.surrogate_feature[i, s]),
                         "threshold": float(self.surrogate_threshold[i, s]),
                         "reversed": bool(self.surrogate_reversed[i, s])}
                        for s in range(ns)
                    ],
                })
            nodes.append(node)
        return {"format_version": FORMAT_VERSION, "n_features": self.n_features,
                "split_order": self.split_order.tolist(), "nodes": nodes}

    @classmethod
    def from_dict(cls, obj: dict) -> "Tree":
        if obj.get("format_version") != FORMAT_VERSION:
            raise FormatVersionError(f"unsupported tree format_version {obj.get('format_version')!r}")
        nodes = obj["nodes"]
        n = len(nodes)
        S = max([len(nd.get("surrogates", [])) for nd in nodes] + [1])
        feature = np.full(n, -1, np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, np.int64)
        right = np.full(n, -1, np.int64)
        default_left = np.zeros(n, np.bool_)
        sf = np.zeros((n, S), np.int64)
        st = np.zeros((n, S))
        sr = np.zeros((n, S), np.bool_)
        ns = np.zeros(n, np.int64)
        value = np.array([nd["value"] for nd in nodes], dtype=np.float64).reshape(n, -1)
        n_samples = np.array([nd["n"] for nd in nodes], dtype=np.int64)
        improvement = np.zeros(n)
        for nd in nodes:
            i = nd["id"]
            if "feature" not in nd:
                continue
            feature[i] = nd["feature"]
            threshold[i] = nd["threshold"]
            left[i] = nd["left"]
            right[i] = nd["right"]
            default_left[i] = nd["missing"] == "left"
            improvement[i] = nd["improvement"]
            for s, sur in enumerate(nd["surrogates"]):
                sf[i, s] = sur["feature"]
                st[i, s] = sur["threshold"]
                sr[i, s] = sur["reversed"]
            ns[i] = len(nd["surrogates"])
        return cls(feature, threshold, left, right, default_left, sf, st, sr, ns, value,
                   n_samples, improvement, np.asarray(obj["split_order"], dtype=np.int64),
                   int(obj["n_features"]))


def _as_predictors(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("predictor matrix must be 2-D")
    return np.ascontiguousarray(X)


def _tree_from_arrays(arrs, n_features: int) -> Tree:
    (feature, threshold, left, right, default_left, sfeat, sthr, srev, nsur, value, n_samples,
     improvement, split_order) = arrs
    return Tree(feature, threshold, left, right, default_left, sfeat, sthr, srev, nsur, value,
                n_samples, improvement, split_order, n_features)


_NO_PRE = (np.zeros(1), np.zeros((1, K.NREC)), np.zeros((1, K.NREC), np.int64),
           np.zeros((1, K.NREC), np.int64), np.zeros(1, np.int64))


class TreeGrower:
    """Reusable tree builder for one predictor matrix.

    Presorting is done once; :meth:`grow` can then be called many times with
    different targets and row subsets (as boosting does).
    """

    def __init__(self, X, min_node: int = 10, n_surrogates: int = 3):
        if min_node < 1:
            raise ValueError("min_node must be >= 1")
        if n_surrogates < 0:
            raise ValueError("n_surrogates must be >= 0")
        X = _as_predictors(X)
        self.XT = np.ascontiguousarray(X.T)
        self.n, self.p = X.shape
        if self.p == 0:
            raise DataError("need at least one predictor")
        self.min_node = int(min_node)
        self.n_surrogates = int(n_surrogates)
        self.order, self.n_valid = K.presort(self.XT)

    def root(self, rows):
        """Sorted workspace ``(idx, cnt)`` for sorted unique ``rows``."""
        member = np.zeros(self.n, np.int64)
        member[rows] = 1
        return K.node_sorted(self.order, self.n_valid, member, len(rows))

    def grow(self, Y, rows=None, depth: int = 1, min_gain: float = 0.0,
             check: bool = True) -> Tree:
        """Grow one tree on ``Y[rows]``.

        ``check=False`` skips input validation and expects sorted unique
        ``rows``.
        """
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if check:
            if Y.shape[0] != self.n:
                raise DataError("targets must have one row per predictor row")
            if rows is not None:
                rows = np.unique(np.asarray(rows, dtype=np.int64))
                if rows.size and (rows[0] < 0 or rows[-1] >= self.n):
                    raise DataError("row index out of range")
            if rows is not None and rows.size == 0:
                raise DataError("cannot fit a tree to zero rows")
            if depth < 1:
                raise ValueError("depth must be >= 1")
            sub = Y if rows is None else Y[rows]
            if not np.isfinite(sub).all():
                raise DataError("targets must be finite")
        if rows is None:
            rows = np.arange(self.n)
        idx, cnt = self.root(rows)
        YT = np.ascontiguousarray(Y.T)
        arrs = K.grow(self.XT, YT, idx, cnt, int(depth), self.min_node, float(min_gain),
                      self.n_surrogates, *_NO_PRE, -1)
        return _tree_from_arrays(arrs, self.p)


def fit_tree(X, Y, rows=None, depth: int = 1, min_node: int = 10, n_surrogates: int = 3,
             min_gain: float = 0.0) -> Tree:
    """Fit one tree to ``Y`` (a single target column or several).

    With several target columns the split criterion is the multivariate SSE
    about the per-node mean vector. Splits whose gain does not exceed
    ``min_gain`` are not made; a tree without any split is a stump.
    """
    return TreeGrower(X, min_node, n_surrogates).grow(Y, rows, depth, min_gain)


def predict_tree(tree: Tree, X, rows=None) -> np.ndarray:
    X = _as_predictors(X)
    if rows is not None:
        X = X[np.asarray(rows, dtype=np.intp)]
    return tree.predict(X)


def tree_influence(tree: Tree) -> dict[int, float]:
    """Summed SSE reduction per predictor used in ``tree``."""
    return tree.sse_reduction_by_predictor
