"""Comparator methods: multivariate CART (single and bagged) and a per-predictor
Wilks' lambda screen with an OLS prediction pipeline."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._seeds import derive_seed
from .dataset import Dataset, make_folds
from .exceptions import DataError
from .tree import Tree, TreeGrower

CP_GRID = (0.001, 0.0025, 0.005, 0.0075, 0.01, 0.015, 0.02)


def _xy(d, Y=None):
    if isinstance(d, Dataset):
        return d.X, d.Y, d.predictor_names, d.outcome_names
    X = np.asarray(d, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    return (X, Y, tuple(f"x{j + 1}" for j in range(X.shape[1])),
            tuple(f"y{q + 1}" for q in range(Y.shape[1])))


# ---------------------------------------------------------------------------
# Wilks' lambda
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WilksResult:
    lambda_: np.ndarray
    F: np.ndarray
    p_value: np.ndarray
    df: np.ndarray
    predictor_names: tuple

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["predictor", "lambda", "F", "df1", "df2", "p_value"])
        for j, name in enumerate(self.predictor_names):
            w.writerow([name, repr(float(self.lambda_[j])), repr(float(self.F[j])),
                        int(self.df[j, 0]), int(self.df[j, 1]), repr(float(self.p_value[j]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def wilks_screen(d, Y=None) -> WilksResult:
    """Test each predictor alone against all outcomes with Wilks' lambda.

    Lambda is det(E)/det(T) for the regression of the outcomes on an
    intercept and the predictor, using rows where the predictor is present.
    With one predictor the F transform is exact on (Q, n - Q - 1) degrees
    of freedom.
    """
    X, Y, names, _ = _xy(d, Y)
    n, p = X.shape
    Q = Y.shape[1]
    lam = np.ones(p)
    F = np.zeros(p)
    pv = np.ones(p)
    df = np.zeros((p, 2), dtype=np.int64)
    for j in range(p):
        ok = ~np.isnan(X[:, j])
        nj = int(ok.sum())
        if nj <= Q + 1:
            raise DataError(f"predictor {names[j]!r} has {nj} rows; need more than {Q + 1}")
        y = Y[ok]
        x = X[ok, j]
        yc = y - y.mean(axis=0)
        xc = x - x.mean()
        T = yc.T @ yc
        sign_t, logdet_t = np.linalg.slogdet(T)
        if sign_t <= 0 or not np.isfinite(logdet_t):
            raise DataError("total SSCP matrix is singular (degenerate outcomes)")
        sxx = float(xc @ xc)
        df[j] = (Q, nj - Q - 1)
        if sxx == 0.0:
            continue
        b = yc.T @ xc
        E = T - np.outer(b, b) / sxx
        sign_e, logdet_e = np.linalg.slogdet(E)
        lj = float(np.exp(logdet_e - logdet_t)) if sign_e > 0 else 0.0
        lj = min(lj, 1.0)
        lam[j] = lj
        if lj >= 1.0:
            continue
        F[j] = np.inf if lj == 0.0 else (1.0 - lj) / lj * (nj - Q - 1) / Q
        pv[j] = float(stats.f.sf(F[j], Q, nj - Q - 1))
    return WilksResult(lam, F, pv, df, tuple(names))


@dataclass(eq=False)
class WilksOLS:
    """Select predictors with Wilks p < ``alpha``, then fit OLS on them."""

    alpha: float = 0.05
    selected: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    coef: np.ndarray | None = None
    screen: WilksResult | None = None

    def fit(self, d, Y=None) -> "WilksOLS":
        X, Y, _, _ = _xy(d, Y)
        self.screen = wilks_screen(X, Y)
        self.selected = np.flatnonzero(self.screen.p_value < self.alpha)
        D = self._design(X)
        self.coef, *_ = np.linalg.lstsq(D, Y, rcond=None)
        return self

    def _design(self, X) -> np.ndarray:
        Z = X[:, self.selected]
        if np.isnan(Z).any():
            raise DataError("selected predictors must be complete for OLS")
        return np.column_stack([np.ones(X.shape[0]), Z])

    def predict(self, X) -> np.ndarray:
        X = X.X if isinstance(X, Dataset) else np.asarray(X, dtype=np.float64)
        return self._design(X) @ self.coef


# ---------------------------------------------------------------------------
# Multivariate CART
# ---------------------------------------------------------------------------

def _internal_subtree(tree: Tree, node: int, alive) -> list[int]:
    out, stack = [], [node]
    while stack:
        k = stack.pop()
        if tree.feature[k] >= 0 and k in alive:
            out.append(k)
            stack.extend((int(tree.left[k]), int(tree.right[k])))
    return out


def prune_sequence(tree: Tree) -> list[tuple[float, frozenset]]:
    """Weakest-link cost-complexity sequence.

    Returns ``[(alpha_0=0, set()), (alpha_1, collapsed_1), ...]`` where
    ``collapsed_k`` lists the nodes turned into leaves in the optimal
    subtree for complexity in ``[alpha_k, alpha_{k+1})``. A node's link
    strength is the summed SSE reduction of the splits below it divided by
    their count.
    """
    alive = set(int(k) for k in np.flatnonzero(tree.feature >= 0))
    seq = [(0.0, frozenset())]
    collapsed: set[int] = set()
    while alive:
        g = {}
        for k in alive:
            sub = _internal_subtree(tree, k, alive)
            g[k] = float(np.sum(tree.improvement[sub])) / len(sub)
        gmin = min(g.values())
        weakest = [k for k, val in g.items() if val <= gmin * (1 + 1e-12)]
        for k in weakest:
            if k in alive:
                sub = _internal_subtree(tree, k, alive)
                alive.difference_update(sub)
                collapsed.add(k)
        alpha = max(gmin, seq[-1][0])
        if alpha == seq[-1][0] and len(seq) > 1:
            seq[-1] = (alpha, frozenset(collapsed))
        else:
            seq.append((alpha, frozenset(collapsed)))
    return seq


def prune_at(tree: Tree, seq, alpha: float) -> Tree:
    """Optimal subtree for complexity ``alpha`` from a pruning sequence."""
    chosen = seq[0][1]
    for a, col in seq:
        if a <= alpha:
            chosen = col
    return tree.pruned(chosen)


def grow_cp_tree(X, Y, cp: float, min_node: int = 10, n_surrogates: int = 3,
                 grower: TreeGrower | None = None, rows=None) -> Tree:
    """Multivariate tree keeping only splits that improve SSE by more than
    ``cp`` times the root SSE."""
    if not cp > 0:
        raise ValueError("cp must be positive")
    grower = TreeGrower(X, min_node, n_surrogates) if grower is None else grower
    Y = np.asarray(Y, dtype=np.float64).reshape(grower.n, -1)
    sub = Y if rows is None else Y[rows]
    root_sse = float(np.sum((sub - sub.mean(axis=0)) ** 2))
    n_rows = sub.shape[0]
    return grower.grow(Y, rows, depth=max(n_rows // max(min_node, 1), 1),
                       min_gain=cp * root_sse)


@dataclass(frozen=True, eq=False)
class MvCartResult:
    tree: Tree
    cp: float
    alpha: float
    cv_error: float
    alphas: np.ndarray
    cv_errors: np.ndarray
    full_tree: Tree

    @property
    def influence(self) -> np.ndarray:
        return self.tree.influence_vector()

    def predict(self, X) -> np.ndarray:
        X = X.X if isinstance(X, Dataset) else X
        return self.tree.predict(X)


def fit_mvcart(d, Y=None, cp: float = 0.01, k_prune: int = 10, seed: int = 0,
               min_node: int = 10, n_surrogates: int = 3) -> MvCartResult:
    """Grow a cp-limited multivariate tree and prune it by k-fold CV.

    Candidate complexities are the geometric means of consecutive values of
    the full tree's pruning sequence; each fold grows its own tree with the
    same cp, prunes it at every candidate and scores the held-out SSE. The
    complexity with the smallest summed error wins (ties go to the simpler
    tree).
    """
    X, Y, _, _ = _xy(d, Y)
    n = X.shape[0]
    full = grow_cp_tree(X, Y, cp, min_node, n_surrogates)
    seq = prune_sequence(full)
    alphas = np.array([a for a, _ in seq])
    betas = np.array([np.sqrt(alphas[i] * alphas[i + 1]) for i in range(len(alphas) - 1)]
                     + [np.inf])
    errs = np.zeros(len(betas))
    plan = make_folds(n, k_prune, derive_seed(seed, 0))
    grower = TreeGrower(X, min_node, n_surrogates)
    for f in range(k_prune):
        tr, te = plan.train_rows(f), plan.test_rows(f)
        t_f = grow_cp_tree(X, Y, cp, min_node, n_surrogates, grower, tr)
        s_f = prune_sequence(t_f)
        for i, b in enumerate(betas):
            pred = prune_at(t_f, s_f, b).predict(X[te])
            errs[i] += float(np.sum((Y[te] - pred) ** 2))
    errs /= Y.size
    best = min(range(len(betas)), key=lambda i: (errs[i], -i))
    return MvCartResult(prune_at(full, seq, alphas[best]), cp, float(alphas[best]),
                        float(errs[best]), alphas, errs, full)


def select_cp(d, Y=None, cp_grid=CP_GRID, k_prune: int = 10, seed: int = 0,
              min_node: int = 10, n_surrogates: int = 3) -> MvCartResult:
    """Fit :func:`fit_mvcart` for each cp and keep the lowest CV error
    (ties to the larger cp)."""
    X, Y, _, _ = _xy(d, Y)
    fits = [fit_mvcart(X, Y, cp, k_prune, seed, min_node, n_surrogates) for cp in cp_grid]
    return min(fits, key=lambda r: (r.cv_error, -r.cp))


@dataclass(frozen=True, eq=False)
class BaggedCart:
    trees: tuple
    n_features: int

    @property
    def influence(self) -> np.ndarray:
        return np.mean([t.influence_vector(self.n_features) for t in self.trees], axis=0)

    def predict(self, X) -> np.ndarray:
        X = X.X if isinstance(X, Dataset) else np.asarray(X, dtype=np.float64)
        return np.mean([t.predict(X) for t in self.trees], axis=0)


def bag_mvcart(d, Y=None, n_boot: int = 1000, cp: float = 0.01, seed: int = 0,
               min_node: int = 10, n_surrogates: int = 3, threads: int = 1) -> BaggedCart:
    """Average of cp-limited multivariate trees on bootstrap resamples.

    Bootstrap b draws n rows with replacement from a seed derived from
    ``(seed, b)``; the trees are not CV-pruned.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    X, Y, _, _ = _xy(d, Y)
    n = X.shape[0]

    def one(b):
        idx = np.random.default_rng(derive_seed(seed, b)).integers(0, n, n)
        return grow_cp_tree(X[idx], Y[idx], cp, min_node, n_surrogates)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            trees = list(ex.map(one, range(n_boot)))
    else:
        trees = [one(b) for b in range(n_boot)]
    return BaggedCart(tuple(trees), X.shape[1])
