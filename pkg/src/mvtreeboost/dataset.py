"""Data ingestion, scaling and resampling plans.

A :class:`Dataset` keeps predictors and outcomes as two float matrices plus
their column names. Missing predictor values are stored as ``NaN``; outcomes
must be complete.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataError, FormatVersionError

FORMAT_VERSION = 1
MISSING_TOKENS = frozenset({"", "NA"})


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-labelled numeric data with predictor/outcome roles.

    ``columns`` records the original column order (used when writing CSV);
    it defaults to predictors followed by outcomes.
    """

    X: np.ndarray
    Y: np.ndarray
    predictor_names: tuple[str, ...]
    outcome_names: tuple[str, ...]
    columns: tuple[str, ...] = ()
    categories: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, ndmin=2)
        Y = np.array(self.Y, dtype=np.float64, ndmin=2)
        if X.ndim != 2 or Y.ndim != 2:
            raise DataError("X and Y must be 2-D")
        if X.shape[0] != Y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        pn = tuple(str(c) for c in self.predictor_names)
        on = tuple(str(c) for c in self.outcome_names)
        if len(pn) != X.shape[1] or len(on) != Y.shape[1]:
            raise DataError("column name counts do not match matrix widths")
        names = pn + on
        if any(not c for c in names):
            raise DataError("column names must be non-empty")
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        bad = ~np.isfinite(Y)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(
                f"outcome column {on[c]!r} has a missing or non-finite value at row {r}"
            )
        if np.isinf(X).any():
            raise DataError("predictors must be finite or NaN (missing)")
        cols = tuple(self.columns) if self.columns else names
        if sorted(cols) != sorted(names):
            raise DataError("columns must be a permutation of predictor and outcome names")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "predictor_names", pn)
        object.__setattr__(self, "outcome_names", on)
        object.__setattr__(self, "columns", cols)

    @classmethod
    def from_arrays(cls, X, Y, predictor_names=None, outcome_names=None):
        X = np.array(X, dtype=np.float64, ndmin=2)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if predictor_names is None:
            predictor_names = [f"x{j + 1}" for j in range(X.shape[1])]
        if outcome_names is None:
            outcome_names = [f"y{q + 1}" for q in range(Y.shape[1])]
        return cls(X, Y, tuple(predictor_names), tuple(outcome_names))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_predictors(self) -> int:
        return self.X.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.Y.shape[1]

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.X)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.X[rows], self.Y[rows], self.predictor_names,
                       self.outcome_names, self.columns, self.categories)

    def with_values(self, X=None, Y=None) -> "Dataset":
        return Dataset(self.X if X is None else X, self.Y if Y is None else Y,
                       self.predictor_names, self.outcome_names, self.columns, self.categories)

    def column(self, name: str) -> np.ndarray:
        if name in self.predictor_names:
            return self.X[:, self.predictor_names.index(name)]
        if name in self.outcome_names:
            return self.Y[:, self.outcome_names.index(name)]
        raise KeyError(name)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def load_csv(path, outcome_names: Sequence[str], predictor_names: Sequence[str] | None = None,
             categorical: Iterable[str] | dict = ()) -> Dataset:
    """Read a header-rowed comma-separated file.

    Empty cells and the literal ``NA`` are missing. Columns listed in
    ``categorical`` are integer-coded in sorted order of their labels; the
    codes are treated as an ordinal predictor. Passing a mapping
    ``{column: [labels...]}`` fixes the coding instead (labels outside it
    are an error); the levels used are kept in ``Dataset.categories``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    outcome_names = list(outcome_names)
    for name in outcome_names:
        if name not in header:
            raise DataError(f"{path}: outcome column {name!r} not in header")
    if predictor_names is None:
        predictor_names = [h for h in header if h not in outcome_names]
    else:
        predictor_names = list(predictor_names)
        for name in predictor_names:
            if name not in header:
                raise DataError(f"{path}: predictor column {name!r} not in header")
    fixed = dict(categorical) if isinstance(categorical, dict) else {}
    categorical = set(categorical)
    levels_used: dict[str, list[str]] = {}

    cols: dict[str, np.ndarray] = {}
    for c, name in enumerate(header):
        if name not in predictor_names and name not in outcome_names:
            continue
        cells = []
        for i, r in enumerate(body):
            if len(r) != len(header):
                raise DataError(f"{path}: row {i + 1} has {len(r)} fields, expected {len(header)}")
            cells.append(r[c].strip())
        if name in categorical:
            seen = {v for v in cells if v not in MISSING_TOKENS}
            levels = [str(v) for v in fixed[name]] if name in fixed else sorted(seen)
            unknown = seen - set(levels)
            if unknown:
                raise DataError(f"{path}: unknown level {sorted(unknown)[0]!r} in "
                                f"categorical column {name!r}")
            code = {v: float(k) for k, v in enumerate(levels)}
            values = np.array([math.nan if v in MISSING_TOKENS else code[v] for v in cells])
            levels_used[name] = levels
        else:
            values = np.empty(len(cells))
            for i, v in enumerate(cells):
                if v in MISSING_TOKENS:
                    values[i] = math.nan
                    continue
                try:
                    values[i] = float(v)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {v!r} in column {name!r}, row {i + 1}"
                    ) from None
                if not math.isfinite(values[i]):
                    raise DataError(
                        f"{path}: non-finite value {v!r} in column {name!r}, row {i + 1}"
                    )
        if name in outcome_names and np.isnan(values).any():
            i = int(np.flatnonzero(np.isnan(values))[0])
            raise DataError(
                f"{path}: missing value in outcome column {name!r} at row {i + 1}; "
                "missing outcomes are not supported"
            )
        cols[name] = values

    X = np.column_stack([cols[n] for n in predictor_names]) if predictor_names \
        else np.empty((len(body), 0))
    Y = np.column_stack([cols[n] for n in outcome_names])
    order = tuple(h for h in header if h in cols)
    return Dataset(X, Y, tuple(predictor_names), tuple(outcome_names), order, levels_used)


def write_csv(d: Dataset, path) -> None:
    """Write ``d`` so that :func:`load_csv` reproduces it exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(d.columns)
        data = [d.column(c) for c in d.columns]
        for i in range(d.n_rows):
            w.writerow(["NA" if math.isnan(col[i]) else repr(float(col[i])) for col in data])


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnScaling:
    mean: float
    sd: float
    applied: bool = True


@dataclass(frozen=True)
class ScalingParams:
    """Per-column location/scale used to standardize and invert."""

    columns: dict = field(default_factory=dict)

    def apply(self, d: Dataset) -> Dataset:
        return self._map(d, lambda v, s: (v - s.mean) / s.sd)

    def invert(self, d: Dataset) -> Dataset:
        return self._map(d, lambda v, s: v * s.sd + s.mean)

    def invert_outcomes(self, Y, outcome_names) -> np.ndarray:
        Y = np.array(Y, dtype=np.float64)
        for q, name in enumerate(outcome_names):
            s = self.columns.get(name)
            if s is not None and s.applied:
                Y[:, q] = Y[:, q] * s.sd + s.mean
        return Y

    def _map(self, d, fn):
        X = d.X.copy()
        Y = d.Y.copy()
        for name, s in self.columns.items():
            if not s.applied:
                continue
            if name in d.predictor_names:
                j = d.predictor_names.index(name)
                X[:, j] = fn(X[:, j], s)
            elif name in d.outcome_names:
                q = d.outcome_names.index(name)
                Y[:, q] = fn(Y[:, q], s)
            else:
                raise DataError(f"scaled column {name!r} not present in dataset")
        return d.with_values(X, Y)

    def to_json(self) -> str:
        return json.dumps({
            "format_version": FORMAT_VERSION,
            "columns": {k: {"mean": v.mean, "sd": v.sd, "applied": v.applied}
                        for k, v in self.columns.items()},
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScalingParams":
        obj = json.loads(text)
        _check_version(obj)
        return cls({k: ColumnScaling(v["mean"], v["sd"], v["applied"])
                    for k, v in obj["columns"].items()})


def _selected_columns(d: Dataset, which) -> list[str]:
    if which == "predictors":
        return list(d.predictor_names)
    if which == "outcomes":
        return list(d.outcome_names)
    if which == "all":
        return list(d.predictor_names) + list(d.outcome_names)
    names = [which] if isinstance(which, str) else list(which)
    for n in names:
        if n not in d.predictor_names and n not in d.outcome_names:
            raise DataError(f"unknown column {n!r}")
    return names


def standardize(d: Dataset, which="all") -> tuple[Dataset, ScalingParams]:
    """Center and scale the selected columns to mean 0, sample sd 1.

    ``which`` is ``"predictors"``, ``"outcomes"``, ``"all"`` or a list of
    column names. Missing entries stay missing.
    """
    params = {}
    for name in _selected_columns(d, which):
        v = d.column(name)
        v = v[~np.isnan(v)]
        if v.size < 2:
            raise DataError(f"column {name!r} has fewer than 2 non-missing values")
        mean = float(v.mean())
        sd = float(v.std(ddof=1))
        if not sd > 0:
            raise DataError(f"constant column {name!r} cannot be standardized")
        params[name] = ColumnScaling(mean, sd, True)
    sp = ScalingParams(params)
    return sp.apply(d), sp


# ---------------------------------------------------------------------------
# Resampling plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    assignments: np.ndarray
    k: int
    seed: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def to_json(self) -> str:
        return json.dumps({"format_version": FORMAT_VERSION, "k": self.k, "seed": self.seed,
                           "assignments": self.assignments.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        obj = json.loads(text)
        _check_version(obj)
        return cls(np.asarray(obj["assignments"], dtype=np.int64), int(obj["k"]), int(obj["seed"]))


def make_folds(n_rows: int, k: int, seed: int) -> FoldPlan:
    """Random partition of ``range(n_rows)`` into ``k`` folds of near-equal size."""
    if not 2 <= k <= n_rows:
        raise ValueError(f"need 2 <= k <= n_rows, got k={k}, n_rows={n_rows}")
    perm = np.random.default_rng(seed).permutation(n_rows)
    assignments = np.empty(n_rows, dtype=np.int64)
    assignments[perm] = np.arange(n_rows) % k
    return FoldPlan(assignments, k, seed)


def split_train_test(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint random row split; the test part has ``round(n * test_fraction)`` rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = d.n_rows
    n_test = int(math.floor(n * test_fraction + 0.5))
    if n - n_test < 2 or n_test < 1:
        raise ValueError(f"split of {n} rows at {test_fraction} leaves too few rows")
    perm = np.random.default_rng(seed).permutation(n)
    return d.take(np.sort(perm[n_test:])), d.take(np.sort(perm[:n_test]))


def _check_version(obj) -> None:
    v = obj.get("format_version")
    if v != FORMAT_VERSION:
        raise FormatVersionError(f"unsupported format_version {v!r} (expected {FORMAT_VERSION})")
