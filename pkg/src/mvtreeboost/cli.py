"""Command-line interface.

Every command writes its artifacts plus ``manifest.json`` (the fully
resolved arguments) into ``--out``. Exit status: 0 success, 1 usage error,
2 data or format error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boosting import FORMAT_VERSION, BoostParams, MvModel, boost_multivariate
from .dataset import load_csv, standardize
from .exceptions import DataError, FormatVersionError, NumericalError
from .interpret import cluster_covex, covex_matrix, nonlin_scan, partial_dependence, \
    relative_influence
from .simlab import ScenarioConfig, run_study
from .tuning import cv_select_trees

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str) -> list[str]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _add_data(p, outcomes_required=True):
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--outcomes", type=_csv_list, required=outcomes_required,
                   help="comma-separated outcome columns")
    p.add_argument("--predictors", type=_csv_list, default=None,
                   help="comma-separated predictor columns (default: all others)")
    p.add_argument("--categorical", type=_csv_list, default=[],
                   help="predictor columns to integer-code")


def _add_boost(p):
    d = BoostParams()
    p.add_argument("--shrinkage", type=float, default=d.shrinkage)
    p.add_argument("--max-trees", type=int, default=d.n_trees)
    p.add_argument("--depth", type=int, default=d.depth)
    p.add_argument("--bag-fraction", type=float, default=d.bag_fraction)
    p.add_argument("--min-node", type=int, default=d.min_node)
    p.add_argument("--n-surrogates", type=int, default=d.n_surrogates)
    p.add_argument("--standardize", choices=["none", "predictors", "outcomes", "all"],
                   default="none")


def _add_model(p):
    p.add_argument("--model", required=True, help="model.json written by fit or cv")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mvtreeboost",
                 description="Multivariate tree boosting with interpretation tools.")
    ap.add_argument("--version", action="store_true",
                    help="print the version and supported model format range")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model with a fixed number of trees")
    _add_data(p)
    _add_boost(p)

    p = sub.add_parser("cv", help="choose the number of trees by k-fold CV and refit")
    _add_data(p)
    _add_boost(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--global-scaling", action="store_true",
                   help="standardize once on all rows instead of per training fold")

    p = sub.add_parser("influence", help="relative influence table")
    _add_model(p)
    p.add_argument("--kind", choices=["relative", "raw"], default="relative")

    p = sub.add_parser("covex", help="covariance-explained matrix")
    _add_model(p)
    p.add_argument("--cluster", action="store_true", help="also write clusters.json")
    p.add_argument("--metric", choices=["euclidean", "manhattan"],
                   default="euclidean")
    p.add_argument("--linkage", choices=["average", "complete"], default="average")

    p = sub.add_parser("pdp", help="partial dependence on one or two predictors")
    _add_model(p)
    p.add_argument("--input", required=True)
    p.add_argument("--vars", type=_csv_list, required=True, help="one or two predictors")
    p.add_argument("--outcome", required=True)
    p.add_argument("--grid-size", type=int, default=50)
    p.add_argument("--pdp-sample", type=int, default=None)

    p = sub.add_parser("nonlin", help="rank predictor pairs by departure from additivity")
    _add_model(p)
    p.add_argument("--input", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--pairs", default="all", help="'all' or k (top-k predictors by influence)")
    p.add_argument("--grid-size", type=int, default=100)
    p.add_argument("--pdp-sample", type=int, default=None)
    p.add_argument("--rank-by", choices=["score", "resid"], default="resid")

    p = sub.add_parser("simulate", help="run a simulation study from a JSON config")
    p.add_argument("--config", required=True)

    for sp in sub.choices.values():
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="master seed")
        sp.add_argument("--threads", type=int, default=1)
    return ap


def _params(a) -> BoostParams:
    return BoostParams(n_trees=a.max_trees, shrinkage=a.shrinkage, depth=a.depth,
                       bag_fraction=a.bag_fraction, min_node=a.min_node,
                       n_surrogates=a.n_surrogates, seed=0 if a.seed is None else a.seed)


def _load(a):
    return load_csv(a.input, a.outcomes, a.predictors, a.categorical)


def _load_for_model(path, model: MvModel):
    with open(path, newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    outs = [o for o in model.outcome_names if o in header]
    if not outs:
        raise DataError(f"{path}: none of the model's outcome columns are present")
    d = load_csv(path, outs, model.predictor_names, model.categories)
    if model.scaling is not None:
        d = model.scaling.apply(d)
    return d


def _fit_report(model: MvModel, d) -> dict:
    pred = model.predict(d)
    Y = d.Y
    r2 = 1.0 - np.mean((Y - pred) ** 2, axis=0) / np.var(Y, axis=0)
    return {"n_trees": model.n_trees, "n_rows": d.n_rows,
            "train_mse": float(model.train_mse[-1]) if model.n_trees else
            float(np.mean((Y - pred) ** 2)),
            "r2": dict(zip(model.outcome_names, map(float, r2))),
            "outcome_counts": {name: sum(s.outcome == q for s in model.steps)
                               for q, name in enumerate(model.outcome_names)}}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_fit(a, out: Path) -> list[str]:
    d = _load(a)
    sp = None
    if a.standardize != "none":
        d, sp = standardize(d, a.standardize)
    model = boost_multivariate(d, _params(a))
    model.scaling = sp
    model.save(out / "model.json")
    _write_json(out / "fit_report.json", _fit_report(model, d))
    return ["model.json", "fit_report.json"]


def cmd_cv(a, out: Path) -> list[str]:
    d = _load(a)
    cols = None if a.standardize == "none" else a.standardize
    if a.global_scaling and cols is None:
        raise UsageError("--global-scaling needs --standardize")
    params = _params(a)
    res, model = cv_select_trees(d, params, k=a.folds, seed=params.seed, standardize_cols=cols,
                                 global_scaling=a.global_scaling, threads=a.threads)
    res.to_csv(out / "cv_curve.csv")
    model.save(out / "model.json")
    scaled = d if model.scaling is None else model.scaling.apply(d)
    rep = _fit_report(model, scaled)
    rep.update(best_M=res.best_M, cv_error=res.best_error, folds=a.folds)
    _write_json(out / "cv_report.json", rep)
    return ["cv_curve.csv", "model.json", "cv_report.json"]


def cmd_influence(a, out: Path) -> list[str]:
    relative_influence(MvModel.load(a.model)).to_csv(out / "influence.csv", a.kind)
    return ["influence.csv"]


def cmd_covex(a, out: Path) -> list[str]:
    c = covex_matrix(MvModel.load(a.model))
    c.to_csv(out / "covex.csv")
    files = ["covex.csv"]
    if a.cluster:
        cl = cluster_covex(c, a.metric, a.linkage)
        _write_json(out / "clusters.json", {
            k: {"order": [v.labels[i] for i in v.order], "merges": v.merges.tolist()}
            for k, v in cl.items()})
        files.append("clusters.json")
    return files


def cmd_pdp(a, out: Path) -> list[str]:
    model = MvModel.load(a.model)
    d = _load_for_model(a.input, model)
    if len(a.vars) > 2:
        raise UsageError("--vars takes one or two predictors")
    pd = partial_dependence(model, a.vars, a.outcome, d, a.grid_size, a.pdp_sample,
                            0 if a.seed is None else a.seed)
    pd.to_csv(out / "pdp.csv")
    return ["pdp.csv"]


def cmd_nonlin(a, out: Path) -> list[str]:
    model = MvModel.load(a.model)
    d = _load_for_model(a.input, model)
    if a.pairs == "all":
        pairs = "all"
    else:
        try:
            pairs = int(a.pairs)
        except ValueError:
            raise UsageError("--pairs must be 'all' or an integer") from None
    t = nonlin_scan(model, d, a.outcome, pairs, a.grid_size, a.pdp_sample,
                    0 if a.seed is None else a.seed, a.rank_by)
    t.to_csv(out / "nonlin.csv")
    return ["nonlin.csv"]


def cmd_simulate(a, out: Path) -> list[str]:
    cfg = ScenarioConfig.load(a.config)
    over = {"threads": a.threads}
    if a.seed is not None:
        over["master_seed"] = a.seed
    cfg = cfg.replace(**over)
    res = run_study(cfg)
    res.to_csv(out / "study.csv")
    res.timing_csv(out / "timing.csv")
    _write_json(out / "summary.json", res.summary())
    # the thread count never changes results; it is kept in the manifest only
    scenario = {k: v for k, v in cfg.to_dict().items() if k != "threads"}
    (out / "config.json").write_text(json.dumps(scenario, indent=2, sort_keys=True) + "\n")
    return ["study.csv", "timing.csv", "summary.json", "config.json"]


COMMANDS = {"fit": cmd_fit, "cv": cmd_cv, "influence": cmd_influence, "covex": cmd_covex,
            "pdp": cmd_pdp, "nonlin": cmd_nonlin, "simulate": cmd_simulate}


def run(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
        if a.version:
            print(f"mvtreeboost {__version__} (model format_version {FORMAT_VERSION}; "
                  f"reads {FORMAT_VERSION}-{FORMAT_VERSION})")
            return EXIT_OK
        if a.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        if a.threads < 1:
            raise UsageError("--threads must be >= 1")
        out = Path(a.out)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[a.command](a, out)
        config = {k: v for k, v in vars(a).items() if k != "version"}
        _write_json(out / "manifest.json", {"command": a.command, "version": __version__,
                                            "format_version": FORMAT_VERSION,
                                            "config": config, "artifacts": files})
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        if isinstance(exc, (DataError, FormatVersionError, json.JSONDecodeError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None) -> None:
    sys.exit(run(argv))
