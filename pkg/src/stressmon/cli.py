"""Command-line orchestration of the pipeline stages.

Each stage reads and writes the documented on-disk formats and drops a
manifest (inputs, output hashes, versions, timings) into its output
directory, so reruns are verifiable.  Exit codes: 0 success, 2 usage
errors, 3 data/config errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, dataset, explain as explain_mod, signals
from .context import ContextSchema, load_zones
from .errors import StressmonError
from .hrv import HRV_FEATURE_NAMES
from .learn import (ModelSpec, grouped_cv, fit_model, knn, model_from_dict,
                    model_to_dict, personalization_eval)
from .learn.trees import TreeEnsembleModel
from .sim import SimConfig, run_simulation

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command, seed, inputs, outputs, timings, config_path=None):
    manifest = {
        "command": command,
        "config_hash": _sha256(config_path) if config_path else None,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": {os.path.basename(str(p)): _sha256(p) for p in outputs},
        "versions": {"stressmon": __version__,
                     "python": sys.version.split()[0],
                     "numpy": np.__version__},
        "timings": timings,
    }
    path = os.path.join(str(out_dir), "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def cmd_simulate(args) -> int:
    t0 = time.monotonic()
    config = SimConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
        config.validate()
    result = run_simulation(config, args.out)
    write_manifest(args.out, "simulate", config.seed, [args.config],
                   list(result.paths.values()),
                   {"total_s": round(time.monotonic() - t0, 3)},
                   config_path=args.config)
    print(f"simulated {config.n_users} users x {config.days} days -> {args.out} "
          f"({result.counts['bursts']} bursts, {result.counts['emas']} EMAs)")
    return EXIT_OK


def featurize_directory(data_dir, zones_path=None):
    """data dir (bursts/context/ema files) -> labeled FeatureMatrix."""
    join = lambda name: os.path.join(str(data_dir), name)
    bursts = signals.read_bursts_jsonl(join("bursts.jsonl")) \
        if os.path.exists(join("bursts.jsonl")) else []
    snapshots = []
    if os.path.exists(join("context.jsonl")):
        from .context import read_context_jsonl
        snapshots = read_context_jsonl(join("context.jsonl"))
    emas = dataset.read_ema_csv(join("ema.csv")) if os.path.exists(join("ema.csv")) else []

    zones = []
    zone_file = zones_path or (join("zones.json") if os.path.exists(join("zones.json")) else None)
    if zone_file:
        zones = load_zones(zone_file)
    schema = ContextSchema(zones=zones)

    raw_windows = signals.windowize(bursts, snapshots)
    windows = dataset.featurize_windows(raw_windows, schema)
    windows = dataset.label_windows(windows, emas)
    labeled = [w for w in windows if w.label2 is not None]
    return dataset.assemble(labeled)


def cmd_featurize(args) -> int:
    t0 = time.monotonic()
    matrix = featurize_directory(args.data, args.zones)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    dataset.write_matrix_csv(matrix, args.out)
    write_manifest(out_dir, "featurize", None, [args.data],
                   [args.out, dataset.sidecar_path(args.out)],
                   {"total_s": round(time.monotonic() - t0, 3)})
    print(f"featurized {matrix.n_rows} labeled windows -> {args.out}")
    return EXIT_OK


def _model_spec(args) -> ModelSpec:
    select_top = args.select_top
    if select_top is not None and select_top != "auto":
        select_top = int(select_top)
    return ModelSpec(kind=args.model, depth=args.depth, k=args.k,
                     n_trees=args.n_trees, rounds=args.rounds,
                     learning_rate=args.learning_rate, select_top=select_top)


def _restrict_features(matrix, which):
    if which == "ppg":
        matrix = matrix.select_columns(list(HRV_FEATURE_NAMES))
    elif which == "context":
        from .context import CONTEXT_FEATURE_NAMES
        matrix = matrix.select_columns(list(CONTEXT_FEATURE_NAMES))
    if which in ("all", "ppg"):
        matrix = dataset.drop_rows_missing_block(matrix, HRV_FEATURE_NAMES)
    return matrix


def save_model_json(path, model):
    if isinstance(model, TreeEnsembleModel):
        rec = model_to_dict(model)
    else:  # knn: training data instead of trees
        rec = {"kind": "knn", "hyperparameters": model.hyperparameters,
               "feature_names": model.feature_names, "trees": [],
               "seed": 0,
               "knn": {"z_train": model.z_train.tolist(),
                       "y_train": model.y_train.tolist(),
                       "mean": model.mean.tolist(), "std": model.std.tolist()}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh, sort_keys=True)
        fh.write("\n")


def load_model_json(path):
    with open(path, encoding="utf-8") as fh:
        rec = json.load(fh)
    if rec["kind"] == "knn":
        params = rec["knn"]
        return knn.KnnModel(kind="knn", k=rec["hyperparameters"]["k"],
                            z_train=np.asarray(params["z_train"]),
                            y_train=np.asarray(params["y_train"], dtype=int),
                            mean=np.asarray(params["mean"]),
                            std=np.asarray(params["std"]),
                            feature_names=list(rec["feature_names"]),
                            hyperparameters=dict(rec["hyperparameters"]))
    return model_from_dict(rec)


def cmd_train_eval(args) -> int:
    t0 = time.monotonic()
    matrix = dataset.read_matrix_csv(args.matrix)
    matrix = _restrict_features(matrix, args.features)
    spec = _model_spec(args)
    report = grouped_cv(matrix, spec, folds=args.folds, seed=args.seed)

    os.makedirs(args.out, exist_ok=True)
    report_json = os.path.join(args.out, "report.json")
    report_csv = os.path.join(args.out, "report.csv")
    report.write(report_json, report_csv)

    # Final model on all labeled rows, for downstream explain/personalize.
    labeled = matrix.select_rows(np.flatnonzero(~np.isnan(matrix.labels)))
    completed = dataset.knn_impute(labeled, k=spec.impute_k,
                                   weighting=spec.impute_weighting)
    X, y = completed.values, completed.labels.astype(int)
    if spec.select_top not in (None, "auto"):
        from .learn.trees import select_top_features
        cols = select_top_features(X, y, int(spec.select_top), seed=args.seed)
    else:
        cols = list(range(len(completed.columns)))
    model = fit_model(spec, X[:, cols], y, args.seed,
                      feature_names=[completed.columns[i] for i in cols])
    model_path = os.path.join(args.out, "model.json")
    save_model_json(model_path, model)

    write_manifest(args.out, "train_eval", args.seed, [args.matrix],
                   [report_json, report_csv, model_path],
                   {"total_s": round(time.monotonic() - t0, 3)})
    fold_txt = " ".join(f"{f:.3f}" for f in report.fold_f1s)
    print(f"{args.model} ({args.features}) mean F1 = {report.mean_f1:.3f} "
          f"over folds [{fold_txt}] -> {args.out}")
    return EXIT_OK


def cmd_explain(args) -> int:
    t0 = time.monotonic()
    model = load_model_json(args.model)
    matrix = dataset.read_matrix_csv(args.matrix)
    labeled = matrix.select_rows(np.flatnonzero(~np.isnan(matrix.labels)))
    if any(c not in labeled.columns for c in model.feature_names):
        raise StressmonError("matrix lacks columns the model was trained on")
    if set(model.feature_names) & set(HRV_FEATURE_NAMES):
        labeled = dataset.drop_rows_missing_block(labeled, HRV_FEATURE_NAMES)
    completed = dataset.knn_impute(labeled)
    view = completed.select_columns(list(model.feature_names))

    rng = np.random.default_rng([args.seed, 11])
    n = view.n_rows
    bg_rows = rng.choice(n, size=min(args.background, n), replace=False)
    background = view.values[np.sort(bg_rows)]
    explain_rows = rng.choice(n, size=min(args.max_rows, n), replace=False)
    rows = view.values[np.sort(explain_rows)]

    ranking = explain_mod.mean_abs_shap(model, rows, background)
    records = explain_mod.beeswarm_export(model, rows, background)

    os.makedirs(args.out, exist_ok=True)
    ranking_path = os.path.join(args.out, "shap_ranking.json")
    with open(ranking_path, "w", encoding="utf-8") as fh:
        json.dump([{"feature": name, "mean_abs_shap": value}
                   for name, value in ranking], fh, indent=2)
        fh.write("\n")
    beeswarm_path = os.path.join(args.out, "beeswarm.csv")
    explain_mod.write_beeswarm_csv(beeswarm_path, records)
    write_manifest(args.out, "explain", args.seed, [args.model, args.matrix],
                   [ranking_path, beeswarm_path],
                   {"total_s": round(time.monotonic() - t0, 3)})
    top = ", ".join(f"{name}={value:.4f}" for name, value in ranking[:5])
    print(f"mean |SHAP| ranking: {top} -> {args.out}")
    return EXIT_OK


def cmd_personalize(args) -> int:
    t0 = time.monotonic()
    matrix = dataset.read_matrix_csv(args.matrix)
    matrix = _restrict_features(matrix, args.features)
    result = personalization_eval(matrix, args.user, _model_spec(args),
                                  seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "personalization.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "personalize", args.seed, [args.matrix],
                   [report_path], {"total_s": round(time.monotonic() - t0, 3)})
    print(f"user {args.user}: F1 before={result.f1_before:.3f} "
          f"after={result.f1_after:.3f} -> {args.out}")
    return EXIT_OK


def _add_model_flags(parser):
    parser.add_argument("--model", choices=["rf", "knn", "boosted"], default="rf")
    parser.add_argument("--depth", type=int, default=5)
    parser.add_argument("--k", type=int, default=5)
    parser.add_argument("--n-trees", type=int, default=100)
    parser.add_argument("--rounds", type=int, default=100)
    parser.add_argument("--learning-rate", type=float, default=0.3)
    parser.add_argument("--features", choices=["all", "ppg", "context"], default="all")
    parser.add_argument("--select-top", default=None,
                        help="number of features to keep, or 'auto'")
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stressmon",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the collection-stack simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", help="simulated files -> labeled feature matrix")
    p.add_argument("--data", required=True, help="directory with the simulation outputs")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--zones", default=None, help="zone config JSON (defaults to data dir)")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train-eval", help="grouped cross-validated evaluation")
    p.add_argument("--matrix", required=True)
    p.add_argument("--folds", type=int, default=5)
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("explain", help="SHAP ranking and beeswarm export")
    p.add_argument("--model", required=True, help="model.json from train-eval")
    p.add_argument("--matrix", required=True)
    p.add_argument("--background", type=int, default=128)
    p.add_argument("--max-rows", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("personalize", help="before/after-personalization F1")
    p.add_argument("--matrix", required=True)
    p.add_argument("--user", required=True)
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_personalize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (StressmonError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
