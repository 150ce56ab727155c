"""Simulation laboratory: sparse multivariate regression data, ROC/AUC scoring
of variable selection, test-set error and replicated method comparisons."""
from __future__ import annotations

import csv
import io
import json
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.stats import rankdata

from ._seeds import derive_seed
from .baselines import CP_GRID, WilksOLS, bag_mvcart, select_cp
from .boosting import BoostParams, fit_multivariate
from .dataset import Dataset
from .exceptions import DataError
from .interpret import relative_influence
from .tuning import cv_curves, mv_mse

TRANSFORMS = ("identity", "square", "cube", "exp")
METHODS = ("mvtboost", "mvcart", "bagged_mvcart", "wilks")
_EXP_MEAN = float(np.exp(0.5))

# per-replication stream keys
_DATA, _METHOD = 0, 1


def transform_values(x, kind: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == "identity":
        return x.copy()
    if kind == "square":
        return x * x
    if kind == "cube":
        return x * x * x
    if kind == "exp":
        return np.exp(x) - _EXP_MEAN
    raise ValueError(f"unknown transform {kind!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 1000
    p: int = 50
    Q: int = 5
    n_active: int = 15
    transform: str = "square"
    target_r2: float = 0.1
    n_reps: int = 20
    master_seed: int = 0
    methods: tuple = ("mvtboost", "mvcart", "wilks")
    # boosting
    max_trees: int = 2000
    shrinkage_grid: tuple = (0.1, 0.01, 0.005)
    depth_grid: tuple = (1, 3)
    bag_fraction: float = 0.5
    cv_folds: int = 5
    min_node: int = 10
    n_surrogates: int = 0
    # CART
    cp_grid: tuple = CP_GRID
    k_prune: int = 10
    n_boot: int = 1000
    bag_cp: float = 0.01
    # linear screen
    wilks_alpha: float = 0.05
    threads: int = 1

    def __post_init__(self):
        for name in ("methods", "shrinkage_grid", "depth_grid", "cp_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if min(self.n, self.p, self.Q, self.n_reps) < 1:
            raise ValueError("n, p, Q and n_reps must be positive")
        if not 0 <= self.n_active <= self.p:
            raise ValueError("n_active must lie in [0, p]")
        if self.n_active and self.Q < 2:
            raise ValueError("each active predictor needs 2 distinct outcomes; Q must be >= 2")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}")
        if not 0 < self.target_r2 < 1:
            raise ValueError("target_r2 must lie in (0, 1)")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}")
        if not self.shrinkage_grid or not self.depth_grid or not self.cp_grid:
            raise ValueError("parameter grids must be non-empty")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def replace(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    @classmethod
    def desk(cls, transform: str = "square", target_r2: float = 0.1, **kw) -> "ScenarioConfig":
        """Reduced protocol that runs on a desktop."""
        return cls(transform=transform, target_r2=target_r2, **kw)

    @classmethod
    def full_scale(cls, transform: str = "identity", target_r2: float = 0.1, p: int = 50,
                    **kw) -> "ScenarioConfig":
        """Full protocol: 100 reps, 20000 trees, five step sizes, all methods."""
        base = dict(p=p, n_active=15 if p == 50 else 100, transform=transform,
                    target_r2=target_r2, n_reps=100, max_trees=20000,
                    shrinkage_grid=(0.1, 0.01, 0.005, 0.001, 0.0005), methods=METHODS)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True, eq=False)
class SimData:
    train: Dataset
    test: Dataset
    B: np.ndarray
    truth: np.ndarray
    error_sd: np.ndarray


def _pattern(rng, cfg: ScenarioConfig) -> np.ndarray:
    """0/1 loading pattern: ``n_active`` random rows, each with 2 random outcomes.

    Redrawn (bounded) until every outcome loads on some predictor, so each
    item-wise R^2 is reachable whenever ``2 * n_active >= Q``.
    """
    for _ in range(1000):
        B = np.zeros((cfg.p, cfg.Q))
        rows = rng.choice(cfg.p, cfg.n_active, replace=False)
        for j in rows:
            B[j, rng.choice(cfg.Q, 2, replace=False)] = 1.0
        if 2 * cfg.n_active < cfg.Q or B.any(axis=0).all():
            return B
    return B


def gen_data(cfg: ScenarioConfig, rep: int) -> SimData:
    """Training and test sets for one replication.

    X is iid standard normal and shared by both sets; the systematic part is
    f(X) B. For the linear case the errors are standard normal and each
    column of B is scaled so the realized item-wise R^2 equals the target;
    otherwise B is 0/1 and the error sd is chosen instead.
    """
    rng = np.random.default_rng(derive_seed(cfg.master_seed, rep, _DATA))
    B = _pattern(rng, cfg)
    X = rng.standard_normal((cfg.n, cfg.p))
    S = transform_values(X, cfg.transform) @ B
    var_s = S.var(axis=0)
    names_y = tuple(f"y{q + 1}" for q in range(cfg.Q))
    for q in range(cfg.Q):
        if not var_s[q] > 0:
            raise DataError(f"target R^2 unreachable for outcome {names_y[q]!r}: "
                            "no systematic variance")
    ratio = cfg.target_r2 / (1.0 - cfg.target_r2)
    if cfg.transform == "identity":
        scale = np.sqrt(ratio / var_s)
        B = B * scale
        S = S * scale
        sd = np.ones(cfg.Q)
    else:
        sd = np.sqrt(var_s / ratio)
    E_train = rng.standard_normal((cfg.n, cfg.Q)) * sd
    E_test = rng.standard_normal((cfg.n, cfg.Q)) * sd
    names_x = tuple(f"x{j + 1}" for j in range(cfg.p))
    train = Dataset.from_arrays(X, S + E_train, names_x, names_y)
    test = Dataset.from_arrays(X.copy(), S + E_test, names_x, names_y)
    return SimData(train, test, B, B.any(axis=1), sd)


def roc_auc(stat, truth, direction: str = "higher") -> float:
    """Probability that a random true predictor outranks a random null one
    (ties count one half). ``direction="lower"`` selects small values."""
    s = np.asarray(stat, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    if s.shape != t.shape:
        raise ValueError("stat and truth must have the same length")
    if not np.isfinite(s).all():
        raise ValueError("stat must be finite")
    if direction not in ("higher", "lower"):
        raise ValueError("direction must be 'higher' or 'lower'")
    n1 = int(t.sum())
    n0 = t.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("truth must contain both classes")
    r = rankdata(s if direction == "higher" else -s)
    return float((r[t].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


# ---------------------------------------------------------------------------
# Methods: each returns (selection statistic, direction, test predictions)
# ---------------------------------------------------------------------------

def _run_mvtboost(sim: SimData, cfg: ScenarioConfig, seed: int):
    tr = sim.train
    best = None
    for a, v in enumerate(cfg.shrinkage_grid):
        for b, depth in enumerate(cfg.depth_grid):
            params = BoostParams(n_trees=cfg.max_trees, shrinkage=v, depth=depth,
                                 bag_fraction=cfg.bag_fraction, min_node=cfg.min_node,
                                 n_surrogates=cfg.n_surrogates)
            curves, _ = cv_curves(tr, params, cfg.cv_folds, derive_seed(seed, a, b))
            curve = curves.mean(axis=0)
            m = int(np.argmin(curve))
            if best is None or curve[m] < best[0]:
                best = (float(curve[m]), params.replace(n_trees=m + 1,
                                                        seed=derive_seed(seed, a, b, 2)))
    model = fit_multivariate(tr.X, tr.Y, best[1], tr.predictor_names, tr.outcome_names)
    infl = relative_influence(model).raw.sum(axis=1)
    return infl, "higher", model.predict(sim.test.X)


def _run_mvcart(sim: SimData, cfg: ScenarioConfig, seed: int):
    r = select_cp(sim.train, cp_grid=cfg.cp_grid, k_prune=cfg.k_prune, seed=seed,
                  min_node=cfg.min_node, n_surrogates=cfg.n_surrogates)
    return r.tree.influence_vector(cfg.p), "higher", r.predict(sim.test.X)


def _run_bagged(sim: SimData, cfg: ScenarioConfig, seed: int):
    ens = bag_mvcart(sim.train, n_boot=cfg.n_boot, cp=cfg.bag_cp, seed=seed,
                     min_node=cfg.min_node, n_surrogates=cfg.n_surrogates)
    return ens.influence, "higher", ens.predict(sim.test.X)


def _run_wilks(sim: SimData, cfg: ScenarioConfig, seed: int):
    w = WilksOLS(alpha=cfg.wilks_alpha).fit(sim.train)
    return w.screen.p_value, "lower", w.predict(sim.test.X)


_RUNNERS = {"mvtboost": _run_mvtboost, "mvcart": _run_mvcart,
            "bagged_mvcart": _run_bagged, "wilks": _run_wilks}


@dataclass(frozen=True)
class MethodRun:
    rep: int
    method: str
    auc: float
    mse: float
    seconds: float
    error: str = ""


CSV_FIELDS = ("rep", "method", "transform", "r2", "auc", "mse", "error")
TIMING_FIELDS = ("rep", "method", "seconds")


def _write(text: str, path) -> str:
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass(eq=False)
class StudyResult:
    config: ScenarioConfig
    runs: list = field(default_factory=list)
    truths: dict = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        return [(r.rep, r.method, self.config.transform, repr(self.config.target_r2),
                 repr(r.auc), repr(r.mse), r.error) for r in self.runs]

    def to_csv(self, path=None) -> str:
        """Per-run results; deterministic for a given config."""
        return _write(_csv_text(CSV_FIELDS, self.rows()), path)

    def timing_csv(self, path=None) -> str:
        """Wall-clock seconds per run (kept apart because it is not reproducible)."""
        return _write(_csv_text(TIMING_FIELDS, [(r.rep, r.method, repr(r.seconds))
                                                for r in self.runs]), path)

    @classmethod
    def from_csv(cls, text: str, config: ScenarioConfig) -> "StudyResult":
        """Rebuild from :meth:`to_csv` output (timings are not restored)."""
        rows = list(csv.DictReader(io.StringIO(text)))
        runs = [MethodRun(int(r["rep"]), r["method"], float(r["auc"]), float(r["mse"]), 0.0,
                          r["error"]) for r in rows]
        return cls(config, runs)

    def values(self, method: str, what: str) -> np.ndarray:
        return np.array([getattr(r, what) for r in self.runs
                         if r.method == method and not r.error])

    def summary(self) -> dict:
        """Mean and standard error of AUC and test MSE per method."""
        out = {}
        for m in self.config.methods:
            s = {"n_ok": int(len(self.values(m, "auc")))}
            for what in ("auc", "mse"):
                v = self.values(m, what)
                v = v[np.isfinite(v)]
                s[what] = float(v.mean()) if v.size else float("nan")
                s[what + "_se"] = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
            out[m] = s
        return out

    def same_as(self, other: "StudyResult") -> bool:
        """Equality of everything except wall-clock timing."""
        return self.rows() == other.rows()


def run_replication(cfg: ScenarioConfig, rep: int) -> tuple[list[MethodRun], np.ndarray | None]:
    """All configured methods on one replication; failures are recorded."""
    try:
        sim = gen_data(cfg, rep)
    except Exception as exc:  # noqa: BLE001 - recorded, study continues
        msg = f"{type(exc).__name__}: {exc}"
        return [MethodRun(rep, m, float("nan"), float("nan"), 0.0, msg) for m in cfg.methods], None
    runs = []
    for k, method in enumerate(METHODS):
        if method not in cfg.methods:
            continue
        t0 = time.perf_counter()
        try:
            stat, direction, pred = _RUNNERS[method](
                sim, cfg, derive_seed(cfg.master_seed, rep, _METHOD, k))
            auc = roc_auc(stat, sim.truth, direction) if 0 < sim.truth.sum() < cfg.p \
                else float("nan")
            runs.append(MethodRun(rep, method, auc, mv_mse(sim.test.Y, pred),
                                  time.perf_counter() - t0))
        except Exception as exc:  # noqa: BLE001
            msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            if not str(exc):
                msg += " " + traceback.format_exc(limit=1).replace("\n", " ")
            runs.append(MethodRun(rep, method, float("nan"), float("nan"),
                                  time.perf_counter() - t0, msg))
    return runs, sim.truth


def run_study(cfg: ScenarioConfig, reps=None, progress=None) -> StudyResult:
    """Run every replication (concurrently with ``cfg.threads`` workers).

    Results are ordered by replication then method, so the output does not
    depend on the thread count.
    """
    reps = range(cfg.n_reps) if reps is None else list(reps)

    def one(rep):
        out = run_replication(cfg, rep)
        if progress is not None:
            progress(rep, out[0])
        return out

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(one, reps))
    else:
        results = [one(r) for r in reps]
    res = StudyResult(cfg)
    for rep, (runs, truth) in zip(reps, results):
        res.runs.extend(runs)
        if truth is not None:
            res.truths[rep] = truth
    return res
