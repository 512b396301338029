"""Command-line front end.

Subcommands
-----------
synth-bench   run optimizer benchmarks on seeded synthetic instances
decompose     fit a model to a tensor container and save the factors
classify      cross-validated subspace classification over a data dir
cluster       contrast clustering over a data dir

Exit codes: 0 success, 2 configuration error (including bad flags),
3 data/format error, 4 numerical failure.

``GBTD_THREADS`` caps worker processes for multi-run benchmarks: unset or
1 runs sequentially; results are keyed by run index either way, so the
schedule never changes the output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as bio
from . import pipeline as pl
from .errors import ConfigError, DataFormatError, NumericalError
from .model import init_random
from .optim import METHODS, OptimizerConfig, minimize

__all__ = ["main", "build_parser"]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="btdkit",
        description="Block-term tensor decompositions: benchmarks, fits, and analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("synth-bench", help="benchmark optimizers on synthetic instances")
    bench.add_argument("--config", required=True, help="experiment config JSON file")
    bench.add_argument("--methods", default="als",
                       help=f"comma list from: {','.join(METHODS)}")
    bench.add_argument("--runs", type=int, default=1, help="number of seeded instances")
    bench.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
    bench.add_argument("--max-iters", type=int, default=None, help="override config max_iters")
    bench.add_argument("--out", required=True, help="output directory")

    dec = sub.add_parser("decompose", help="fit a model to a tensor container")
    dec.add_argument("--input", required=True, help="input .gbtd container")
    dec.add_argument("--config", required=True, help="experiment config JSON file")
    dec.add_argument("--method", default=None, help="override config method")
    dec.add_argument("--seed", type=int, default=None, help="override config seed")
    dec.add_argument("--max-iters", type=int, default=None, help="override config max_iters")
    dec.add_argument("--out", required=True, help="output directory")

    cls = sub.add_parser("classify", help="cross-validated subspace classification")
    _pipeline_args(cls)
    cls.add_argument("--folds", type=int, default=4)
    cls.add_argument("--r-object", type=int, default=None,
                     help="singular vectors per test object (default: class basis width)")
    cls.add_argument("--ica", action="store_true", help="refine bases with FastICA")

    clu = sub.add_parser("cluster", help="contrast clustering of a data directory")
    _pipeline_args(clu)
    clu.add_argument("--metric", default="canberra", choices=pl.DISTANCE_METRICS)
    clu.add_argument("--linkage", default="complete", choices=("average", "complete"))
    clu.add_argument("--k", type=int, default=None,
                     help="cluster count (default: number of distinct labels)")
    return parser


def _pipeline_args(p):
    p.add_argument("--data", required=True, help="directory of .gbtd objects with labels.json")
    p.add_argument("--flavor", default="gtld", choices=("glro", "gtld"))
    p.add_argument("--rc", type=int, default=5, help="common rank")
    p.add_argument("--ri", type=int, default=1, help="individual rank")
    p.add_argument("--gamma", type=int, default=0, help="mode of interest")
    p.add_argument("--iters", type=int, default=10, help="fitting sweeps per model")
    p.add_argument("--method", default="als")
    p.add_argument("--constraints", default="projected",
                   choices=("none", "projected", "lagrange"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth-bench":
            _cmd_synth_bench(args)
        elif args.command == "decompose":
            _cmd_decompose(args)
        elif args.command == "classify":
            _cmd_classify(args)
        elif args.command == "cluster":
            _cmd_cluster(args)
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


def _worker_count(n_tasks):
    raw = os.environ.get("GBTD_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"GBTD_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(cap, n_tasks))


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, payload):
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# synth-bench


def _bench_one(task):
    """One (method, run) cell; module-level so worker processes can import it."""
    config_json, method, run_index, base_seed, max_iters = task
    config = bio.ExperimentConfig.from_json(config_json)
    seed = base_seed + run_index
    target, _truth = bio.synth_generate(config, seed)
    template = bio.build_template(config)
    model0 = init_random(template, seed, config.init_scale)
    opt = OptimizerConfig(
        method=method,
        max_iters=max_iters if max_iters is not None else config.max_iters,
        grad_tol=config.grad_tol,
        step_tol=config.step_tol,
        residual_tol=config.residual_tol,
    )
    fit = minimize(target, model0, opt, constraint=config.constraint)
    return run_index, fit


def _cmd_synth_bench(args):
    config = bio.ExperimentConfig.from_json(args.config)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ConfigError("--methods is empty")
    if args.runs < 1:
        raise ConfigError("--runs must be positive")
    base_seed = config.seed if args.seed is None else args.seed
    out = _out_dir(args.out)
    config_json = config.to_json()

    summary = []
    for method in methods:
        opt_method = method  # validated inside OptimizerConfig
        tasks = [(config_json, opt_method, r, base_seed, args.max_iters)
                 for r in range(args.runs)]
        workers = _worker_count(len(tasks))
        results = {}
        if workers == 1:
            for task in tasks:
                run, fit = _bench_one(task)
                results[run] = fit
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for run, fit in pool.map(_bench_one, tasks):
                    results[run] = fit
        fits = [results[r] for r in range(args.runs)]
        traces = [f.trace for f in fits]
        for r, fit in enumerate(fits):
            bio.export_trace(fit.trace, out / f"trace_{fit.method}_{r:03d}.csv")
        agg = bio.aggregate_traces(traces)
        bio.export_table(agg, out / f"agg_{fits[0].method}.csv")
        finals = np.array([f.objective for f in fits])
        rels = np.array([f.relative_residual for f in fits])
        summary.append({
            "method": fits[0].method,
            "runs": args.runs,
            "median_final_objective": float(np.median(finals)),
            "median_final_relative_residual": float(np.median(rels)),
            "converged": int(sum(f.status == "converged" for f in fits)),
            "stalled": int(sum(f.status == "stalled" for f in fits)),
        })
        print(f"{fits[0].method}: median final objective {np.median(finals):.3e}, "
              f"median relative residual {np.median(rels):.3e}")
    bio.export_table(summary, out / "summary.csv")
    _write_manifest(out, {
        "command": "synth-bench",
        "config": json.loads(config_json),
        "methods": [m for m in methods],
        "runs": args.runs,
        "base_seed": base_seed,
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    })


# ---------------------------------------------------------------------------
# decompose


def _cmd_decompose(args):
    config = bio.ExperimentConfig.from_json(args.config)
    if args.method is not None:
        config = replace(config, method=args.method)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.max_iters is not None:
        config = replace(config, max_iters=args.max_iters)
    target, _meta = bio.load_container(args.input)
    if tuple(target.shape) != config.dims:
        raise ConfigError(
            f"container dims {target.shape} do not match config dims {config.dims}"
        )
    template = bio.build_template(config)
    model0 = init_random(template, config.seed, config.init_scale)
    opt = OptimizerConfig(method=config.method, max_iters=config.max_iters,
                          grad_tol=config.grad_tol, step_tol=config.step_tol,
                          residual_tol=config.residual_tol)
    fit = minimize(target, model0, opt, constraint=config.constraint)
    out = _out_dir(args.out)
    bio.save_model(out / "model.zip", fit.model)
    bio.export_trace(fit.trace, out / "trace.csv")
    _write_manifest(out, {
        "command": "decompose",
        "input": str(args.input),
        "status": fit.status,
        "method": fit.method,
        "final_objective": fit.objective,
        "final_relative_residual": fit.relative_residual,
        "iterations": fit.n_iters,
        "files": ["model.zip", "trace.csv"],
    })
    print(f"{fit.method}: {fit.status} after {fit.n_iters} iterations, "
          f"relative residual {fit.relative_residual:.6e}")


# ---------------------------------------------------------------------------
# data directories (classify / cluster)


def _load_labeled_dir(data_dir):
    root = Path(data_dir)
    labels_path = root / "labels.json"
    if not labels_path.exists():
        raise DataFormatError(f"{root} has no labels.json")
    try:
        labels_map = json.loads(labels_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"labels.json is not valid JSON: {exc}") from exc
    if not isinstance(labels_map, dict) or not labels_map:
        raise DataFormatError("labels.json must map container names to labels")
    objects, labels, names = [], [], []
    for name in sorted(labels_map):
        path = root / name
        if not path.exists():
            raise DataFormatError(f"labels.json names a missing container: {name}")
        tensor, _ = bio.load_container(path)
        objects.append(tensor)
        labels.append(labels_map[name])
        names.append(name)
    return objects, labels, names


def _pipeline_config(args, use_ica=False):
    return pl.PipelineConfig(
        flavor=args.flavor, r_common=args.rc, r_individual=args.ri,
        gamma=args.gamma, n_iters=args.iters, method=args.method,
        constraint=args.constraints, seed=args.seed, use_ica=use_ica,
    )


def _cmd_classify(args):
    objects, labels, names = _load_labeled_dir(args.data)
    cfg = _pipeline_config(args, use_ica=args.ica)
    folds = pl.kfold_split(len(objects), args.folds, seed=args.seed)
    rows = []
    all_true, all_pred = [], []
    for fold_idx, test_idx in enumerate(folds):
        test = set(int(i) for i in test_idx)
        train_objs = [o for i, o in enumerate(objects) if i not in test]
        train_labels = [l for i, l in enumerate(labels) if i not in test]
        test_objs = [objects[i] for i in sorted(test)]
        test_labels = [labels[i] for i in sorted(test)]
        models = pl.fit_class_models(train_objs, train_labels, cfg)
        preds = pl.classify(test_objs, models, cfg.gamma, r_object=args.r_object)
        acc = pl.accuracy(test_labels, preds)
        prec, rec, f1 = pl.precision_recall_f1(test_labels, preds)
        rows.append({"fold": fold_idx, "accuracy": acc, "precision": prec,
                     "recall": rec, "f1": f1, "n_test": len(test_objs)})
        all_true.extend(test_labels)
        all_pred.extend(preds)
    acc = pl.accuracy(all_true, all_pred)
    prec, rec, f1 = pl.precision_recall_f1(all_true, all_pred)
    rows.append({"fold": "all", "accuracy": acc, "precision": prec,
                 "recall": rec, "f1": f1, "n_test": len(all_true)})
    out = _out_dir(args.out)
    bio.export_table(rows, out / "metrics.csv")
    _write_manifest(out, {
        "command": "classify", "data": str(args.data), "flavor": args.flavor,
        "r_common": args.rc, "r_individual": args.ri, "gamma": args.gamma,
        "folds": args.folds, "ica": bool(args.ica), "seed": args.seed,
        "overall_accuracy": acc, "files": ["metrics.csv"],
    })
    print(f"classify[{args.flavor}]: overall accuracy {acc:.4f} "
          f"over {args.folds} folds ({len(objects)} objects, {len(set(labels))} classes)")


def _cmd_cluster(args):
    objects, labels, names = _load_labeled_dir(args.data)
    cfg = _pipeline_config(args)
    k = args.k if args.k is not None else len(set(labels))
    feats, fit = pl.fit_contrast_features(objects, cfg)
    dist = pl.pairwise_distance(feats, args.metric)
    merges = pl.agglomerative(dist, linkage=args.linkage)
    pred = pl.cluster_labels(merges, len(objects), k)
    true_codes = [sorted(set(labels)).index(l) for l in labels]
    rows = [{
        "flavor": args.flavor, "metric": args.metric, "linkage": args.linkage,
        "k": k,
        "ari": pl.adjusted_rand(true_codes, pred),
        "ami": pl.adjusted_mutual_info(true_codes, pred),
        "fm": pl.fowlkes_mallows(true_codes, pred),
    }]
    out = _out_dir(args.out)
    bio.export_table(rows, out / "metrics.csv")
    assign = [{"name": n, "label": l, "cluster": int(c)}
              for n, l, c in zip(names, labels, pred)]
    bio.export_table(assign, out / "assignments.csv")
    _write_manifest(out, {
        "command": "cluster", "data": str(args.data), "flavor": args.flavor,
        "metric": args.metric, "linkage": args.linkage, "k": k,
        "fit_status": fit.status, "files": ["metrics.csv", "assignments.csv"],
    })
    print(f"cluster[{args.flavor}/{args.metric}/{args.linkage}]: "
          f"ARI {rows[0]['ari']:.4f}, AMI {rows[0]['ami']:.4f}, FM {rows[0]['fm']:.4f}")


if __name__ == "__main__":
    sys.exit(main())
