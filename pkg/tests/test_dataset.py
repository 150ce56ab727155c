import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from mvtreeboost.dataset import (Dataset, FoldPlan, ScalingParams, load_csv, make_folds,
                                 split_train_test, standardize, write_csv)
from mvtreeboost.exceptions import DataError, FormatVersionError


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_basic(tmp_path):
    d = load_csv(_write(tmp_path, "x1,x2,y\n1,2,3\n4,5,6\n7,8,9\n"), ["y"])
    assert (d.n_rows, d.n_predictors, d.n_outcomes) == (3, 2, 1)
    assert d.predictor_names == ("x1", "x2")
    np.testing.assert_array_equal(d.Y[:, 0], [3, 6, 9])


def test_load_na_predictor(tmp_path):
    d = load_csv(_write(tmp_path, "x1,x2,y\nNA,2,3\n4,,6\n"), ["y"])
    np.testing.assert_array_equal(d.missing_mask, [[True, False], [False, True]])


def test_load_na_outcome_names_column_and_row(tmp_path):
    with pytest.raises(DataError, match=r"'y'.*row 2"):
        load_csv(_write(tmp_path, "x1,y\n1,3\n2,NA\n"), ["y"])


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match="not in header"):
        load_csv(_write(tmp_path, "x1,y\n1,2\n"), ["z"])
    with pytest.raises(DataError, match=r"non-numeric.*'x1'.*row 1"):
        load_csv(_write(tmp_path, "x1,y\nabc,2\n"), ["y"])
    with pytest.raises(DataError, match="empty"):
        load_csv(_write(tmp_path, ""), ["y"])


def test_missing_token_is_case_sensitive(tmp_path):
    with pytest.raises(DataError, match="non-numeric"):
        load_csv(_write(tmp_path, "x1,y\nna,2\n"), ["y"])


def test_categorical_integer_coding(tmp_path):
    d = load_csv(_write(tmp_path, "g,y\nb,1\na,2\nb,3\n,4\n"), ["y"], categorical=["g"])
    np.testing.assert_array_equal(d.X[:3, 0], [1, 0, 1])
    assert np.isnan(d.X[3, 0])


def test_dataset_invariants():
    with pytest.raises(DataError, match="unique"):
        Dataset.from_arrays(np.zeros((2, 1)), np.zeros(2), ["a"], ["a"])
    with pytest.raises(DataError, match="rows"):
        Dataset(np.zeros((2, 1)), np.zeros((3, 1)), ("a",), ("b",))
    with pytest.raises(DataError, match="non-empty"):
        Dataset.from_arrays(np.zeros((2, 1)), np.zeros(2), [""], ["y"])


def test_standardize_examples():
    d = Dataset.from_arrays([[1.0], [2.0], [3.0]], [0.0, 1.0, 5.0])
    s, sp = standardize(d, "predictors")
    np.testing.assert_allclose(s.X[:, 0], [-1, 0, 1], atol=1e-15)
    assert sp.columns["x1"].mean == 2.0 and sp.columns["x1"].sd == 1.0
    s2, sp2 = standardize(s, "predictors")
    np.testing.assert_allclose(s2.X, s.X, atol=1e-10)
    assert abs(sp2.columns["x1"].mean) < 1e-10 and abs(sp2.columns["x1"].sd - 1) < 1e-10
    with pytest.raises(DataError, match="constant column 'x1'"):
        standardize(Dataset.from_arrays([[5.0], [5.0], [5.0]], [1.0, 2.0, 3.0]), "predictors")
    with pytest.raises(DataError, match="fewer than 2"):
        standardize(Dataset.from_arrays([[np.nan], [5.0], [np.nan]], [1.0, 2, 3]), "predictors")


cols = hnp.arrays(np.float64, st.tuples(st.integers(3, 30), st.integers(1, 4)),
                  elements=st.floats(-1e6, 1e6, allow_nan=False))


@given(cols)
def test_standardize_moments_and_roundtrip(X):
    X = X.copy()
    X[0, :] = np.arange(X.shape[1])  # guard against constant columns below
    X[1, :] = X[0, :] + 1.0
    if (np.ptp(X, axis=0) < 1e-3 * (1 + np.abs(X).max(axis=0))).any():
        return
    X[2, 0] = np.nan
    d = Dataset.from_arrays(X, np.zeros(len(X)))
    s, sp = standardize(d, "predictors")
    for j in range(X.shape[1]):
        v = s.X[:, j][~np.isnan(s.X[:, j])]
        assert abs(v.mean()) < 1e-10
        assert abs(v.std(ddof=1) - 1.0) < 1e-10
    assert np.isnan(s.X[2, 0])
    back = sp.invert(s)
    ok = ~np.isnan(X)
    np.testing.assert_allclose(back.X[ok], X[ok], rtol=1e-10, atol=1e-10 * np.nanmax(np.abs(X)))
    np.testing.assert_allclose(sp.apply(d).X, s.X, atol=0)


def test_scaling_json_roundtrip_and_version():
    d = Dataset.from_arrays([[1.0], [2.0], [4.0]], [0.0, 1.0, 5.0])
    _, sp = standardize(d, "all")
    sp2 = ScalingParams.from_json(sp.to_json())
    assert sp2.columns == sp.columns
    obj = json.loads(sp.to_json())
    obj["format_version"] = 99
    with pytest.raises(FormatVersionError):
        ScalingParams.from_json(json.dumps(obj))


def test_make_folds_examples():
    assert sorted(make_folds(10, 5, 1).sizes()) == [2] * 5
    assert sorted(make_folds(11, 5, 1).sizes()) == [2, 2, 2, 2, 3]
    np.testing.assert_array_equal(make_folds(50, 3, 7).assignments,
                                  make_folds(50, 3, 7).assignments)
    for bad in (1, 12):
        with pytest.raises(ValueError):
            make_folds(11, bad, 0)


@given(st.integers(2, 200), st.integers(2, 20), st.integers(0, 2**31))
def test_fold_plan_properties(n, k, seed):
    k = min(k, n)
    plan = make_folds(n, k, seed)
    sizes = plan.sizes()
    assert sizes.sum() == n and sizes.min() >= 1 and sizes.max() - sizes.min() <= 1
    held = np.concatenate([plan.test_rows(f) for f in range(k)])
    np.testing.assert_array_equal(np.sort(held), np.arange(n))
    p2 = FoldPlan.from_json(plan.to_json())
    np.testing.assert_array_equal(p2.assignments, plan.assignments)


def test_split_train_test():
    d = Dataset.from_arrays(np.arange(1000.0)[:, None], np.arange(1000.0))
    tr, te = split_train_test(d, 0.2, 3)
    assert (tr.n_rows, te.n_rows) == (800, 200)
    assert not set(tr.X[:, 0]) & set(te.X[:, 0])
    tr2, _ = split_train_test(d, 0.2, 3)
    np.testing.assert_array_equal(tr.X, tr2.X)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            split_train_test(d, bad, 0)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 4)),
                  elements=st.one_of(st.floats(-1e12, 1e12), st.just(np.nan))),
       hnp.arrays(np.float64, st.integers(1, 3), elements=st.floats(-1e3, 1e3)))
def test_csv_roundtrip(tmp_path_factory, X, yrow):
    Y = np.tile(yrow, (X.shape[0], 1)) + np.arange(X.shape[0])[:, None]
    d = Dataset.from_arrays(X, Y)
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, p)
    back = load_csv(p, d.outcome_names)
    np.testing.assert_array_equal(back.missing_mask, d.missing_mask)
    np.testing.assert_array_equal(np.nan_to_num(back.X), np.nan_to_num(d.X))
    np.testing.assert_array_equal(back.Y, d.Y)
    assert back.columns == d.columns


def test_fixed_categorical_levels(tmp_path):
    from mvtreeboost.dataset import load_csv
    p = tmp_path / "c.csv"
    p.write_text("g,y\nb,1\nc,2\nNA,3\n")
    d = load_csv(p, ["y"], categorical=["g"])
    assert d.categories == {"g": ["b", "c"]}
    np.testing.assert_array_equal(d.X[:, 0], [0.0, 1.0, np.nan])
    d2 = load_csv(p, ["y"], categorical={"g": ["a", "b", "c"]})
    np.testing.assert_array_equal(d2.X[:2, 0], [1.0, 2.0])
    with pytest.raises(DataError):
        load_csv(p, ["y"], categorical={"g": ["a", "b"]})
    assert d.take([0, 1]).categories == d.categories
