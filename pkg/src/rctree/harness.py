"""Experiment orchestration: cross-validation, lambda grids, psi selection and
the decomposition benchmark.

Randomness flows from one top-level seed.  Fold ``f`` of dataset ``d`` draws
its random starts from :func:`derive_seed` ``(seed, d, f)``; the folds
themselves come from ``kfold_split(N, k, seed)``.  Accuracy is measured with
integer leaf labels and sparsity on the raw coefficients with tolerance 1e-5.
"""

from __future__ import annotations

import csv
import json
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import LogisticCdf, TreeTopology, predict
from .data import RawTable, encode_and_scale, kfold_split
from .decomp import DecompConfig, run_decomposition
from .errors import ConfigError
from .objective import PenaltySpec, Problem, default_costs, sparsity_indices
from .solver import SolverConfig, multistart_train, random_start, train

DEFAULT_LAMBDAS = tuple(2.0**r for r in range(-8, 6))
DEFAULT_PSIS = (1.25e-3, 1.25e-4, 1.25e-5, 1.25e-6)


def derive_seed(seed: int, dataset_id: str, fold: int) -> int:
    """Start seed for one fold: a hash of (seed, dataset id, fold)."""
    ss = np.random.SeedSequence([int(seed) % 2**63, zlib.crc32(dataset_id.encode()), int(fold)])
    return int(ss.generate_state(1, np.uint64)[0] % 2**63)


@dataclass(frozen=True)
class Method:
    """Model and training settings shared by every run of an experiment."""

    depth: int = 1
    specs: tuple = ()
    gamma: float = 512.0
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    decomp: DecompConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        TreeTopology(self.depth)

    @property
    def name(self) -> str:
        parts = [f"{s.kind}-{s.scope}" for s in self.specs] or ["unregularized"]
        if self.decomp is not None:
            parts.append(self.decomp.variant)
        return "+".join(parts)

    def lam(self, scope: str) -> float:
        return sum(s.lam for s in self.specs if s.scope == scope)

    def with_lambda(self, lam: float, scope: str | None = None) -> Method:
        """Copy with ``lam`` on the regularizer of ``scope`` (or the only one)."""
        if scope is None:
            if len(self.specs) != 1:
                raise ConfigError("method must have exactly one regularizer to vary lambda")
            return replace(self, specs=(replace(self.specs[0], lam=float(lam)),))
        if not any(s.scope == scope for s in self.specs):
            raise ConfigError(f"method has no {scope} regularizer")
        specs = tuple(replace(s, lam=float(lam)) if s.scope == scope else s for s in self.specs)
        return replace(self, specs=specs)


@dataclass(frozen=True)
class RunRecord:
    dataset: str
    method: str
    fold: int
    start_index: int
    lambda_local: float
    lambda_global: float
    psi: float | None
    accuracy: float
    deltaL: float
    deltaG: float
    final_objective: float
    elapsed: float
    seed: int

    def to_dict(self, timing: bool = False) -> dict:
        """Record as a dict; wall time is left out unless ``timing`` so reruns compare equal."""
        doc = asdict(self)
        if not timing:
            doc.pop("elapsed")
        return doc


def write_records(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def write_timing_log(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({"fold": r.fold, "start_index": r.start_index, "elapsed": r.elapsed}) + "\n")


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def resolve_jobs(jobs: int | None) -> int:
    return os.cpu_count() or 1 if jobs is None else max(1, int(jobs))


# -- cross-validation --------------------------------------------------------


@dataclass
class CVResult:
    accuracy: float
    deltaL: float
    deltaG: float
    records: list
    solutions: list  # per fold, relaxed params of each start (for warm starts)


def _fold_problem(raw: RawTable, method: Method, train_rows):
    ds, _ = encode_and_scale(raw, train_rows)
    K = ds.K
    prob = Problem(
        ds.X[train_rows],
        ds.y[train_rows],
        default_costs(K),
        LogisticCdf(method.gamma),
        list(method.specs),
        method.penalty,
    )
    return ds, prob


def _run_fold(task):
    raw, method, fold, train_rows, test_rows, seed, dataset_id, starts, psi, augment = task
    ds, prob = _fold_problem(raw, method, train_rows)
    topo = TreeTopology(method.depth)
    fseed = derive_seed(seed, dataset_id, fold)
    fresh = [random_start(ds.p, method.depth, ds.K, fseed, i) for i in range(method.solver.restarts)]
    if starts is None:
        starts = fresh
    elif augment:
        starts = list(starts) + fresh
    records, sols = [], []
    Xte, yte = ds.X[test_rows], ds.y[test_rows]
    for i, start in enumerate(starts):
        if method.decomp is not None:
            cfg = method.decomp if psi is None else replace(method.decomp, psi=psi)
            res = run_decomposition(prob, topo, replace(cfg, seed=fseed + i), start=start, solver=method.solver)
        else:
            res = train(prob, topo, method.solver, start, start_index=i)
        acc = float(np.mean(predict(res.params, prob.cdf, Xte) == yte))
        dl, dg = sparsity_indices(res.params.a)
        records.append(
            RunRecord(
                dataset_id,
                method.name,
                fold,
                i,
                method.lam("local"),
                method.lam("global"),
                None if method.decomp is None else (method.decomp.psi if psi is None else psi),
                acc,
                dl,
                dg,
                float(res.final_objective),
                float(res.elapsed),
                int(seed),
            )
        )
        sols.append(res.relaxed_params if res.relaxed_params is not None else res.params)
    return records, sols


def _aggregate(records, k):
    per_fold = [[r for r in records if r.fold == f] for f in range(k)]
    per_fold = [rs for rs in per_fold if rs]

    def mean_of(attr):
        return float(np.mean([np.mean([getattr(r, attr) for r in rs]) for rs in per_fold]))

    return mean_of("accuracy"), mean_of("deltaL"), mean_of("deltaG")


def cross_validate(
    raw: RawTable,
    method: Method,
    k: int = 5,
    seed: int = 0,
    dataset_id: str = "data",
    jobs: int = 1,
    warm_starts: list | None = None,
    psi: float | None = None,
    folds: list | None = None,
    augment: bool = False,
) -> CVResult:
    """k-fold cross-validation with ``method.solver.restarts`` starts per fold.

    Scaling is fit on each training part.  Fold accuracy is the mean over
    starts and the overall figure the mean over folds; the sparsity indices
    are aggregated the same way.  ``warm_starts[f]`` replaces the random
    starts of fold ``f``, or is followed by them when ``augment``.
    """
    if k < 2:
        raise ConfigError("cross-validation needs k >= 2")
    if raw.labels is None:
        raise ConfigError("cross-validation needs a labelled table")
    folds = kfold_split(raw.n_rows, k, seed) if folds is None else folds
    all_rows = np.arange(raw.n_rows)
    tasks = []
    for f, test in enumerate(folds):
        train_rows = np.setdiff1d(all_rows, test)
        starts = None if warm_starts is None else warm_starts[f]
        tasks.append((raw, method, f, train_rows, test, seed, dataset_id, starts, psi, augment))
    out = _map(_run_fold, tasks, jobs)
    records = [r for recs, _ in out for r in recs]
    acc, dl, dg = _aggregate(records, len(folds))
    return CVResult(acc, dl, dg, records, [s for _, s in out])


# -- lambda grids -----------------------------------------------------------


@dataclass
class GridResult:
    rows: list  # dicts {lambda, accuracy, deltaL, deltaG}
    best: dict
    records: list


def grid_search_1d(
    raw: RawTable,
    method: Method,
    grid=DEFAULT_LAMBDAS,
    k: int = 5,
    seed: int = 0,
    dataset_id: str = "data",
    jobs: int = 1,
) -> GridResult:
    """Cross-validate each lambda; best row maximizes accuracy, ties going to the larger lambda."""
    grid = list(grid)
    if not grid:
        raise ConfigError("lambda grid is empty")
    rows, records = [], []
    for lam in grid:
        cv = cross_validate(raw, method.with_lambda(lam), k, seed, dataset_id, jobs)
        rows.append({"lambda": float(lam), "accuracy": cv.accuracy, "deltaL": cv.deltaL, "deltaG": cv.deltaG})
        records.extend(cv.records)
    best = max(rows, key=lambda r: (r["accuracy"], r["lambda"]))
    return GridResult(rows, best, records)


@dataclass
class Grid2DResult:
    lambdas_local: list
    lambdas_global: list
    accuracy: np.ndarray
    deltaL: np.ndarray
    deltaG: np.ndarray
    records: list
    files: list = field(default_factory=list)


def _row_task(task):
    raw, method, lam_l, grid_g, k, seed, dataset_id, warm, augment, folds = task
    cells, warm_from, records = [], None, []
    for lam_g in grid_g:
        m = method.with_lambda(lam_l, "local").with_lambda(lam_g, "global")
        starts = warm_from if warm else None
        cv = cross_validate(raw, m, k, seed, dataset_id, 1, starts, folds=folds, augment=augment)
        cells.append((cv.accuracy, cv.deltaL, cv.deltaG))
        records.extend(cv.records)
        warm_from = cv.solutions
    return cells, records


def grid_search_2d(
    raw: RawTable,
    method: Method,
    grid_local=DEFAULT_LAMBDAS,
    grid_global=DEFAULT_LAMBDAS,
    k: int = 5,
    seed: int = 0,
    dataset_id: str = "data",
    warm_start: bool = True,
    augment: bool = False,
    out_dir=None,
    jobs: int = 1,
) -> Grid2DResult:
    """Accuracy and sparsity grids over (lambda_local, lambda_global).

    ``method`` must carry one local and one global regularizer.  Rows (fixed
    lambda_local) are traversed in order of lambda_global; each cell's starts
    are the previous cell's solutions when ``warm_start`` (plus fresh random
    starts when ``augment``).  Rows are independent and run in parallel.
    With ``out_dir`` the grids are written as ``{dataset}_{acc|deltaL|deltaG}.csv``.
    """
    grid_local, grid_global = list(grid_local), list(grid_global)
    if not grid_local or not grid_global:
        raise ConfigError("lambda grids must be nonempty")
    scopes = sorted(s.scope for s in method.specs)
    if scopes != ["global", "local"]:
        raise ConfigError("2-D grid needs exactly one local and one global regularizer")
    folds = kfold_split(raw.n_rows, k, seed)
    tasks = [(raw, method, lam_l, grid_global, k, seed, dataset_id, warm_start, augment, folds) for lam_l in grid_local]
    out = _map(_row_task, tasks, jobs)
    shape = (len(grid_local), len(grid_global))
    acc, dl, dg = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    records = []
    for i, (cells, recs) in enumerate(out):
        for j, (a, l, g) in enumerate(cells):
            acc[i, j], dl[i, j], dg[i, j] = a, l, g
        records.extend(recs)
    res = Grid2DResult(grid_local, grid_global, acc, dl, dg, records)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for tag, values in (("acc", acc), ("deltaL", dl), ("deltaG", dg)):
            path = os.path.join(out_dir, f"{dataset_id}_{tag}.csv")
            write_grid_csv(path, grid_local, grid_global, values)
            res.files.append(path)
    return res


def write_grid_csv(path, grid_local, grid_global, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda_local\\lambda_global"] + [repr(float(g)) for g in grid_global])
        for lam, row in zip(grid_local, values):
            w.writerow([repr(float(lam))] + [repr(float(v)) for v in row])


# -- psi selection ------------------------------------------------------------


@dataclass
class PsiResult:
    best_psi: float
    scores: dict  # psi -> mean inner validation accuracy
    selection_records: list
    final: CVResult


def nested_cv_psi(
    raw: RawTable,
    method: Method,
    psi_grid=DEFAULT_PSIS,
    outer_k: int = 5,
    inner_k: int = 5,
    seed: int = 0,
    dataset_id: str = "data",
    jobs: int = 1,
) -> PsiResult:
    """Pick psi by inner cross-validation inside each outer training block.

    For every psi, every outer fold's training block is split into
    ``inner_k`` folds and cross-validated; the score of psi is the mean over
    outer folds of the inner accuracy.  The best psi (ties to the larger)
    is then evaluated by the outer cross-validation.
    """
    if method.decomp is None:
        raise ConfigError("psi selection needs a decomposition method")
    psi_grid = [float(v) for v in psi_grid]
    if not psi_grid:
        raise ConfigError("psi grid is empty")
    outer = kfold_split(raw.n_rows, outer_k, seed)
    scores, selection = {}, []
    if len(psi_grid) > 1:
        for psi in psi_grid:
            fold_scores = []
            for f, test in enumerate(outer):
                block = np.setdiff1d(np.arange(raw.n_rows), test)
                sub = raw.subset(block)
                cv = cross_validate(sub, method, inner_k, seed, f"{dataset_id}/outer{f}", jobs, psi=psi)
                fold_scores.append(cv.accuracy)
                selection.extend(replace(r, fold=f * inner_k + r.fold) for r in cv.records)
            scores[psi] = float(np.mean(fold_scores))
        best = max(psi_grid, key=lambda v: (scores[v], v))
    else:
        best = psi_grid[0]
    final = cross_validate(raw, method, outer_k, seed, dataset_id, jobs, psi=best, folds=outer)
    return PsiResult(best, scores, selection, final)


# -- decomposition benchmark ---------------------------------------------------


@dataclass
class DecompBenchmark:
    notdec_seconds: float
    notdec_accuracy: float
    series: list  # dicts {macro, seconds, accuracy, saving_pct, objective}
    dec_results: list
    notdec_results: list

    def matching_point(self, tol: float = 0.015) -> dict | None:
        """First macro-iteration whose accuracy is within ``tol`` of not-DEC."""
        for row in self.series:
            if row["accuracy"] >= self.notdec_accuracy - tol:
                return row
        return None


def compare_decomposition(
    raw: RawTable,
    method: Method,
    decomp: DecompConfig,
    k: int = 5,
    fold: int = 0,
    seed: int = 0,
    dataset_id: str = "data",
    out_csv=None,
) -> DecompBenchmark:
    """Time not-DEC multistart training against S-NB-DEC on one fold, from identical starts.

    Both methods keep the lowest-objective start; the decomposition series
    reports, after each macro-iteration, the summed wall time over starts,
    the test accuracy of the currently best start and the time saving
    ``(1 - t_dec / t_notdec) * 100``.  Runs are sequential so times compare.
    """
    folds = kfold_split(raw.n_rows, k, seed)
    test = folds[fold]
    train_rows = np.setdiff1d(np.arange(raw.n_rows), test)
    ds, prob = _fold_problem(raw, method, train_rows)
    topo = TreeTopology(method.depth)
    fseed = derive_seed(seed, dataset_id, fold)
    starts = [random_start(ds.p, method.depth, ds.K, fseed, i) for i in range(method.solver.restarts)]
    Xte, yte = ds.X[test], ds.y[test]

    t0 = time.perf_counter()
    best, notdec = multistart_train(prob, topo, method.solver, starts)
    t_nd = time.perf_counter() - t0
    acc_nd = float(np.mean(predict(best.params, prob.cdf, Xte) == yte))

    decs = [
        run_decomposition(prob, topo, replace(decomp, seed=fseed + i), start=s, solver=method.solver, test=(Xte, yte))
        for i, s in enumerate(starts)
    ]
    series = []
    macros = [r["macro"] for r in decs[0].records]
    for m_i, macro in enumerate(macros):
        rows = [d.records[m_i] for d in decs]
        seconds = sum(r["cumulative_seconds"] for r in rows)
        pick = min(range(len(rows)), key=lambda i: (rows[i]["objective"], i))
        series.append(
            {
                "macro": macro,
                "seconds": seconds,
                "accuracy": rows[pick]["test_accuracy"],
                "saving_pct": (1.0 - seconds / t_nd) * 100.0,
                "objective": rows[pick]["objective"],
            }
        )
    bench = DecompBenchmark(t_nd, acc_nd, series, decs, notdec)
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["macro", "seconds", "accuracy", "saving_pct", "notdec_seconds", "notdec_accuracy"])
            for row in series:
                w.writerow([row["macro"], row["seconds"], row["accuracy"], row["saving_pct"], t_nd, acc_nd])
    return bench
