"""Command-line interface.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are the
long flag names with dashes replaced by underscores).  Flags given on the
command line override the file, which overrides the built-in defaults; the
effective configuration is written next to the outputs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import LogisticCdf, TreeTopology, class_posterior, params_from_dict, params_to_dict, predict
from .data import Transform, encode_and_scale, load_csv, synthetic_oblique
from .decomp import DecompConfig, run_decomposition
from .errors import ConfigError, RCTError
from .harness import (
    DEFAULT_LAMBDAS,
    Method,
    RunRecord,
    compare_decomposition,
    cross_validate,
    derive_seed,
    grid_search_1d,
    grid_search_2d,
    nested_cv_psi,
    resolve_jobs,
    write_grid_csv,
    write_records,
    write_timing_log,
)
from .objective import KINDS, SCOPES, PenaltySpec, Problem, RegularizerSpec, default_costs, sparsity_indices
from .solver import SolverConfig, random_start, train
from .vc import VcQuery, shatter_construction, vc_lower, vc_upper_witness, verify_separation

DECOMP_NAMES = {"s-nb-dec": "S-NB-DEC", "c-nb-dec": "C-NB-DEC"}

COMMON_DEFAULTS = {"seed": 0, "jobs": None, "out": "rct_out"}
MODEL_DEFAULTS = {
    "data": None,
    "label": None,
    "depth": 1,
    "gamma": 512.0,
    "reg": [],
    "restarts": 10,
    "max_iters": 3000,
    "decomp": None,
    "psi": 1.25e-4,
    "max_macro": 10,
    "inner_iters": 40,
    "init_iters": 5,
    "no_penalty": False,
}
DEFAULTS = {
    "train": {**COMMON_DEFAULTS, **MODEL_DEFAULTS, "name": None},
    "predict": {"model": None, "data": None, "label": None, "out": None},
    "cv": {**COMMON_DEFAULTS, **MODEL_DEFAULTS, "folds": 5, "psi_grid": None, "inner_folds": 5, "name": None},
    "grid": {**COMMON_DEFAULTS, **MODEL_DEFAULTS, "folds": 5, "lambdas": None, "name": None},
    "heatmap": {
        **COMMON_DEFAULTS,
        **MODEL_DEFAULTS,
        "folds": 5,
        "lambdas_local": None,
        "lambdas_global": None,
        "no_warm_start": False,
        "augment": False,
        "name": None,
    },
    "decomp-bench": {
        **COMMON_DEFAULTS,
        **MODEL_DEFAULTS,
        "depth": 2,
        "synthetic": False,
        "folds": 5,
        "fold": 0,
        "gamma_start": 1.0,
        "init_schedule": "continuation",
        "init_iters": 600,
        "name": None,
    },
    "vc": {"p": None, "d": None, "shatter_eps": None, "json": False},
}


# -- parsing helpers --------------------------------------------------------------


def parse_number(text: str) -> float:
    """Float, or a power of two written ``2^r``."""
    text = str(text).strip()
    try:
        if text.startswith("2^"):
            return 2.0 ** float(text[2:])
        return float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def parse_reg(text: str) -> RegularizerSpec:
    """Parse ``kind:scope:lambda[:alpha|:q,eps]``.

    The optional shape field is alpha for ``l0exp``, ``q,eps`` for the power
    surrogates and eps for ``logeps``.

    Examples
    --------
    >>> parse_reg("l0exp:global:32").lam
    32.0
    >>> parse_reg("appr1:local:2^-3:0.5,1e-4").q
    0.5
    """
    parts = str(text).split(":")
    if len(parts) not in (3, 4):
        raise ConfigError(f"regularizer {text!r} must look like kind:scope:lambda[:shape]")
    kind, scope, lam = parts[0], parts[1], parse_number(parts[2])
    if kind not in KINDS or scope not in SCOPES:
        raise ConfigError(f"regularizer {text!r}: kind must be one of {KINDS}, scope one of {SCOPES}")
    shape = {}
    if len(parts) == 4:
        fields = parts[3].split(",")
        if kind == "l0exp" and len(fields) == 1:
            shape["alpha"] = parse_number(fields[0])
        elif kind in ("appr1", "appr2") and len(fields) == 2:
            shape["q"], shape["eps"] = parse_number(fields[0]), parse_number(fields[1])
        elif kind == "logeps" and len(fields) == 1:
            shape["eps"] = parse_number(fields[0])
        else:
            raise ConfigError(f"regularizer {text!r}: shape field does not fit kind {kind}")
    return RegularizerSpec(kind, scope, lam, **shape)


def parse_list(value) -> list[float] | None:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return [parse_number(v) for v in value]
    return [parse_number(v) for v in str(value).split(",") if v.strip()]


def merge_config(command: str, ns: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flags given on the command line."""
    eff = dict(DEFAULTS[command])
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    path = getattr(ns, "config", None)
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(eff))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {unknown}")
        eff.update(doc)
    eff.update(given)
    return eff


# -- shared builders ----------------------------------------------------------------


def build_method(cfg: dict) -> Method:
    specs = tuple(parse_reg(r) if isinstance(r, str) else RegularizerSpec.from_dict(r) for r in cfg["reg"])
    solver = SolverConfig(
        max_iters=int(cfg["max_iters"]),
        restarts=int(cfg["restarts"]),
        seed=int(cfg["seed"]),
        gamma_start=float(cfg.get("gamma_start", 1.0)),
    )
    decomp = None
    if cfg["decomp"] is not None:
        name = str(cfg["decomp"]).lower()
        if name not in DECOMP_NAMES:
            raise ConfigError(f"--decomp must be one of {sorted(DECOMP_NAMES)}")
        decomp = DecompConfig(
            psi=float(cfg["psi"]),
            max_macro=int(cfg["max_macro"]),
            inner_iters=int(cfg["inner_iters"]),
            init_iters=int(cfg["init_iters"]),
            init_schedule=cfg.get("init_schedule", "prox"),
            variant=DECOMP_NAMES[name],
            seed=int(cfg["seed"]),
        )
    pen = PenaltySpec.off() if cfg["no_penalty"] else PenaltySpec()
    return Method(int(cfg["depth"]), specs, float(cfg["gamma"]), pen, solver, decomp)


def read_table(cfg: dict):
    if not cfg.get("data"):
        raise ConfigError("--data is required")
    label = cfg["label"]
    if label is not None and str(label).lstrip("-").isdigit():
        label = int(label)
    return load_csv(cfg["data"], -1 if label is None else label)


def dataset_name(cfg: dict) -> str:
    if cfg.get("name"):
        return str(cfg["name"])
    if cfg.get("data"):
        return Path(cfg["data"]).stem
    return "synthetic"


def prepare_out(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str))
    return out


def emit(text: str) -> None:
    print(text, flush=True)


# -- commands ---------------------------------------------------------------------------


def cmd_train(cfg: dict) -> int:
    method = build_method(cfg)
    raw = read_table(cfg)
    if raw.labels is None:
        raise ConfigError("training data needs a label column")
    ds, tf = encode_and_scale(raw)
    prob = Problem(ds.X, ds.y, default_costs(ds.K), LogisticCdf(method.gamma), list(method.specs), method.penalty)
    topo = TreeTopology(method.depth)
    name = dataset_name(cfg)
    fseed = derive_seed(method.solver.seed, name, 0)
    results = []
    for i in range(method.solver.restarts):
        start = random_start(ds.p, method.depth, ds.K, fseed, i)
        if method.decomp is not None:
            res = run_decomposition(prob, topo, replace(method.decomp, seed=fseed + i), start=start, solver=method.solver)
            res.start_index = i
        else:
            res = train(prob, topo, method.solver, start, start_index=i)
        results.append(res)
    best = min(results, key=lambda r: (r.final_objective, r.start_index))
    acc = float(np.mean(predict(best.params, prob.cdf, ds.X) == ds.y))
    dl, dg = sparsity_indices(best.params.a)
    out = prepare_out(cfg)
    doc = {
        "model": params_to_dict(best.params, prob.cdf),
        "transform": tf.to_dict(),
        "regularizers": [s.to_dict() for s in method.specs],
        "method": method.name,
    }
    (out / "model.json").write_text(json.dumps(doc, indent=1))
    rec = RunRecord(
        name, method.name, 0, best.start_index, method.lam("local"), method.lam("global"),
        None if method.decomp is None else method.decomp.psi, acc, dl, dg,
        float(best.final_objective), float(best.elapsed), int(method.solver.seed),
    )
    write_records(out / "records.jsonl", [rec])
    write_timing_log(out / "timing.jsonl", [rec])
    emit(f"train_accuracy={acc:.4f} objective={best.final_objective:.6g} deltaL={dl:.2f} deltaG={dg:.2f}")
    emit(f"model written to {out / 'model.json'}")
    return 0


def cmd_predict(cfg: dict) -> int:
    if not cfg["model"] or not cfg["data"]:
        raise ConfigError("--model and --data are required")
    try:
        doc = json.loads(Path(cfg["model"]).read_text())
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {cfg['model']}") from None
    params, cdf = params_from_dict(doc["model"])
    tf = Transform.from_dict(doc["transform"])
    label = cfg["label"] if cfg["label"] is not None else tf.label_name
    raw = load_csv(cfg["data"], None)
    if label is not None and label in raw.feature_names:
        raw = load_csv(cfg["data"], label)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ds = tf.apply(raw)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    post = class_posterior(params, cdf, ds.X)
    labels = predict(params, cdf, ds.X)
    fh = open(cfg["out"], "w", newline="") if cfg["out"] else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["row", "label"] + [f"p_{c}" for c in tf.class_names])
        for i, (lab, row) in enumerate(zip(labels, post)):
            w.writerow([i, tf.class_names[lab - 1]] + [repr(float(v)) for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()
    if ds.y is not None and cfg["out"]:
        emit(f"accuracy={float(np.mean(labels == ds.y)):.4f}")
    return 0


def cmd_cv(cfg: dict) -> int:
    method = build_method(cfg)
    raw = read_table(cfg)
    jobs = resolve_jobs(cfg["jobs"])
    name = dataset_name(cfg)
    seed = int(cfg["seed"])
    if cfg["psi_grid"] is not None:
        if method.decomp is None:
            raise ConfigError("--psi-grid needs --decomp")
        res = nested_cv_psi(raw, method, parse_list(cfg["psi_grid"]), int(cfg["folds"]), int(cfg["inner_folds"]),
                            seed, name, jobs)
        out = prepare_out(cfg)
        write_records(out / "selection_records.jsonl", res.selection_records)
        cv = res.final
        emit(f"best_psi={res.best_psi:g}")
    else:
        cv = cross_validate(raw, method, int(cfg["folds"]), seed, name, jobs)
        out = prepare_out(cfg)
    write_records(out / "records.jsonl", cv.records)
    write_timing_log(out / "timing.jsonl", cv.records)
    summary = {"accuracy": cv.accuracy, "deltaL": cv.deltaL, "deltaG": cv.deltaG}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    emit(f"accuracy={cv.accuracy:.4f} deltaL={cv.deltaL:.2f} deltaG={cv.deltaG:.2f}")
    return 0


def cmd_grid(cfg: dict) -> int:
    method = build_method(cfg)
    raw = read_table(cfg)
    grid = parse_list(cfg["lambdas"]) or list(DEFAULT_LAMBDAS)
    res = grid_search_1d(raw, method, grid, int(cfg["folds"]), int(cfg["seed"]), dataset_name(cfg),
                         resolve_jobs(cfg["jobs"]))
    out = prepare_out(cfg)
    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["lambda", "accuracy", "deltaL", "deltaG"])
        w.writeheader()
        w.writerows(res.rows)
    write_records(out / "records.jsonl", res.records)
    for row in res.rows:
        emit(f"lambda={row['lambda']:g} accuracy={row['accuracy']:.4f} deltaL={row['deltaL']:.2f} deltaG={row['deltaG']:.2f}")
    emit(f"best lambda={res.best['lambda']:g} accuracy={res.best['accuracy']:.4f}")
    return 0


def cmd_heatmap(cfg: dict) -> int:
    method = build_method(cfg)
    raw = read_table(cfg)
    name = dataset_name(cfg)
    out = Path(cfg["out"])
    res = grid_search_2d(
        raw,
        method,
        parse_list(cfg["lambdas_local"]) or list(DEFAULT_LAMBDAS),
        parse_list(cfg["lambdas_global"]) or list(DEFAULT_LAMBDAS),
        int(cfg["folds"]),
        int(cfg["seed"]),
        name,
        warm_start=not cfg["no_warm_start"],
        augment=bool(cfg["augment"]),
        jobs=resolve_jobs(cfg["jobs"]),
    )
    out = prepare_out(cfg)
    for tag, values in (("acc", res.accuracy), ("deltaL", res.deltaL), ("deltaG", res.deltaG)):
        path = out / f"{name}_{tag}.csv"
        write_grid_csv(path, res.lambdas_local, res.lambdas_global, values)
        emit(f"wrote {path}")
    write_records(out / "records.jsonl", res.records)
    return 0


def cmd_decomp_bench(cfg: dict) -> int:
    if cfg["decomp"] is None:
        cfg = {**cfg, "decomp": "s-nb-dec"}
    method = build_method(cfg)
    if cfg["synthetic"]:
        raw = synthetic_oblique()
    else:
        raw = read_table(cfg)
    out = prepare_out(cfg)
    bench = compare_decomposition(
        raw, method, method.decomp, int(cfg["folds"]), int(cfg["fold"]), int(cfg["seed"]), dataset_name(cfg),
        out_csv=out / "decomp_series.csv",
    )
    emit(f"not-DEC seconds={bench.notdec_seconds:.2f} accuracy={bench.notdec_accuracy:.4f}")
    for row in bench.series:
        emit(f"macro={row['macro']} seconds={row['seconds']:.2f} accuracy={row['accuracy']:.4f} "
             f"saving_pct={row['saving_pct']:.1f}")
    return 0


def cmd_vc(cfg: dict) -> int:
    if cfg["p"] is None or cfg["d"] is None:
        raise ConfigError("--p and --d are required")
    q = VcQuery(int(cfg["p"]), int(cfg["d"]))
    lb = vc_lower(q)
    up = vc_upper_witness(q)
    doc = {"p": q.p, "D": q.D, "lower": lb.value, "upper_witness": up, "conditions": list(lb.conditions)}
    lower_text = str(lb.value) if lb.holds else f"none (violated: {lb.violated})"
    emit(f"lower={lower_text}, upper_witness={up}")
    emit("upper_witness is the order bound 2^(4(D-1))*p^2, not a count")
    if cfg["shatter_eps"] is not None:
        eps = float(cfg["shatter_eps"])
        c = shatter_construction(q.p, eps)
        sep = verify_separation(q.p, eps, c.gamma_min)
        note = " (p=3 admitted: denominator p^2-3p+1 equals 1)" if q.p == 3 else ""
        emit(f"gamma_min={c.gamma_min:.4f} verification={'true' if sep.ok else 'false'}{note}")
        emit(f"worst_margins right_set={sep.worst_right_set:.6g} left_set={sep.worst_left_set:.6g}")
        doc.update(gamma_min=c.gamma_min, verification=sep.ok)
    if cfg["json"]:
        emit(json.dumps(doc))
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "grid": cmd_grid,
    "heatmap": cmd_heatmap,
    "decomp-bench": cmd_decomp_bench,
    "vc": cmd_vc,
}


# -- argument parser -------------------------------------------------------------------


def _add(p, *flags, **kw):
    p.add_argument(*flags, default=argparse.SUPPRESS, **kw)


def _common(p):
    _add(p, "--config", help="JSON file of option values (flags override it)")
    _add(p, "--seed", type=int, help="top-level random seed (default 0)")
    _add(p, "--jobs", type=int, help="worker processes (default: logical cores)")
    _add(p, "--out", help="output directory (default rct_out)")


def _model(p):
    _add(p, "--data", help="CSV with a header row")
    _add(p, "--label", help="label column name or index (default: last column)")
    _add(p, "--depth", type=int, help="tree depth D (default 1)")
    _add(p, "--gamma", type=float, help="logistic slope (default 512)")
    _add(p, "--reg", action="append",
         help="regularizer kind:scope:lambda[:alpha|:q,eps]; repeat for local and global")
    _add(p, "--restarts", type=int, help="random starts (default 10)")
    _add(p, "--max-iters", type=int, help="gradient iterations per start (default 3000)")
    _add(p, "--no-penalty", action="store_true", help="drop the coverage and minimum-rate penalties")
    _add(p, "--decomp", choices=sorted(DECOMP_NAMES), help="train by node decomposition")
    _add(p, "--psi", type=float, help="proximal weight (default 1.25e-4)")
    _add(p, "--max-macro", type=int, help="decomposition macro-iterations (default 10)")
    _add(p, "--inner-iters", type=int, help="iterations per subproblem (default 40)")
    _add(p, "--init-iters", type=int, help="full-variable initialization iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rctree", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"rctree {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tree and write model.json", allow_abbrev=False)
    _common(p)
    _model(p)
    _add(p, "--name", help="dataset id used for seeding (default: data file stem)")

    p = sub.add_parser("predict", help="labels and posteriors for a CSV", allow_abbrev=False)
    _add(p, "--config", help="JSON file of option values")
    _add(p, "--model", help="model.json written by train")
    _add(p, "--data", help="CSV to label")
    _add(p, "--label", help="label column to score against, if present")
    _add(p, "--out", help="output CSV (default: stdout)")

    p = sub.add_parser("cv", help="k-fold cross-validation", allow_abbrev=False)
    _common(p)
    _model(p)
    _add(p, "--folds", type=int, help="number of folds k (default 5)")
    _add(p, "--psi-grid", help="comma list; selects psi by nested cross-validation")
    _add(p, "--inner-folds", type=int, help="inner folds for psi selection (default 5)")
    _add(p, "--name", help="dataset id used for seeding (default: data file stem)")

    p = sub.add_parser("grid", help="cross-validate a 1-D lambda grid", allow_abbrev=False)
    _common(p)
    _model(p)
    _add(p, "--folds", type=int, help="number of folds k (default 5)")
    _add(p, "--lambdas", help="comma list, 2^r allowed (default 2^-8..2^5)")
    _add(p, "--name", help="dataset id used for seeding (default: data file stem)")

    p = sub.add_parser("heatmap", help="accuracy and sparsity grids over (lambda_local, lambda_global)",
                       allow_abbrev=False)
    _common(p)
    _model(p)
    _add(p, "--folds", type=int, help="number of folds k (default 5)")
    _add(p, "--lambdas-local", help="comma list (default 2^-8..2^5)")
    _add(p, "--lambdas-global", help="comma list (default 2^-8..2^5)")
    _add(p, "--no-warm-start", action="store_true", help="cold random starts in every cell")
    _add(p, "--augment", action="store_true", help="add fresh random starts to the warm starts")
    _add(p, "--name", help="dataset id used in file names (default: data file stem)")

    p = sub.add_parser("decomp-bench", help="time decomposition against monolithic training", allow_abbrev=False)
    _common(p)
    _model(p)
    _add(p, "--synthetic", action="store_true", help="use the built-in synthetic dataset")
    _add(p, "--folds", type=int, help="number of folds k (default 5)")
    _add(p, "--fold", type=int, help="fold used as the test set (default 0)")
    _add(p, "--gamma-start", type=float, help="initial slope of the continuation (default 1)")
    _add(p, "--init-schedule", choices=["prox", "continuation"], help="initialization (default continuation)")
    _add(p, "--name", help="dataset id used for seeding")

    p = sub.add_parser("vc", help="VC-dimension bounds and the shattering check", allow_abbrev=False)
    _add(p, "--config", help="JSON file of option values")
    _add(p, "--p", type=int, help="number of inputs")
    _add(p, "--d", type=int, help="tree depth")
    _add(p, "--shatter-eps", type=float, help="also build and verify the separating split")
    _add(p, "--json", action="store_true", help="print a JSON summary line")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = merge_config(ns.command, ns)
        return COMMANDS[ns.command](cfg)
    except RCTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
