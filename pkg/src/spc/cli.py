"""Command-line entry point for the full experimental protocol.

Commands: gen-data, train, eval, sweep, noise-study, ratio-study, ood,
repr-quality, report. Every run writes its artifacts under
<out-root>/<run-id>/ where the run id is a short hash of the run's inputs
(command, flags, dataset content hash), so re-running the same command
reproduces the same directory with byte-identical result numbers. The
output root comes from --out or the SPC_OUT environment variable
(default ./out). Input dataset files are never modified.

Exit codes: 0 success, 2 bad flags, 3 data errors, 4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys

import numpy as np

from . import data as dataio
from .baselines import VibParams
from .data import DataError, Dataset, PerturbationSpec
from .diffcore import Tensor
from .encoder import encode
from .metrics import adjusted_rand_index, kmeans, macro_f1, silhouette
from .objectives import ObjectiveConfig
from .trainer import (
    Model,
    RunReport,
    TrainConfig,
    TrainingDiverged,
    evaluate_split,
    load_model,
    model_outputs,
    run_seeds,
    save_model,
    summarize,
    sweep,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

DEFAULT_GRID = [0.001, 0.01, 0.1, 1.0, 10.0]


def out_root(args) -> str:
    return args.out or os.environ.get("SPC_OUT", "out")


def default_data_path(args) -> str:
    return os.path.join(out_root(args), "data", "mixture.jsonl")


def short_hash(obj) -> str:
    payload = json.dumps(obj, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_seeds(text: str) -> list[int]:
    """Either a count ("5" -> seeds 0..4) or an explicit list ("3,7,11")."""
    if "," in text:
        return [int(v) for v in text.split(",") if v != ""]
    return list(range(int(text)))


def parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def make_objective(kind: str, task: str, beta: float = 0.0, gamma: float = 0.0,
                   cp_weight: float = 0.0, structured_from: str = "sample") -> ObjectiveConfig:
    """Build a config for `kind`, dropping weights the kind does not use.

    Lets one flag set (--beta/--gamma/--cp-weight) drive a list of
    objectives: ce simply ignores them instead of erroring.
    """
    if kind in ("ce", "mse"):
        beta = gamma = 0.0
    if kind in ("pc", "vib", "mse_pc", "mse_vib", "ce_cp"):
        gamma = 0.0
    if kind == "ce_cp":
        beta = 0.0
    else:
        cp_weight = 0.0
    return ObjectiveConfig(kind=kind, beta=beta, gamma=gamma, task=task,
                           cp_weight=cp_weight, structured_from=structured_from)


# --- artifact plumbing ---

def start_run(args, command: str, inputs: dict) -> tuple[str, dict]:
    """Create the run directory; returns (run_dir, manifest skeleton)."""
    manifest = {"command": command, "inputs": inputs}
    run_id = short_hash(manifest)
    manifest["run_id"] = run_id
    run_dir = os.path.join(out_root(args), run_id)
    os.makedirs(run_dir, exist_ok=True)
    return run_dir, manifest


def _write_atomic(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def finish_run(run_dir: str, manifest: dict, results: dict,
               csv_rows: list[dict] | None = None, timing: dict | None = None) -> None:
    report_path = os.path.join(run_dir, "report.json")
    _write_atomic(report_path, json.dumps({"results": results, "timing": timing or {}},
                                          indent=2, sort_keys=True))
    artifacts = {"report.json": file_sha256(report_path)}
    if csv_rows:
        csv_path = os.path.join(run_dir, "report.csv")
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(csv_rows[0].keys()))
        writer.writeheader()
        writer.writerows(csv_rows)
        _write_atomic(csv_path, buf.getvalue())
        artifacts["report.csv"] = file_sha256(csv_path)
    ckpt_dir = os.path.join(run_dir, "ckpt")
    if os.path.isdir(ckpt_dir):
        for name in sorted(os.listdir(ckpt_dir)):
            artifacts[f"ckpt/{name}"] = file_sha256(os.path.join(ckpt_dir, name))
    manifest["artifacts"] = artifacts
    _write_atomic(os.path.join(run_dir, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True))


def _load_dataset(args) -> Dataset:
    path = args.data or default_data_path(args)
    return dataio.load(path, task=args.task, hash_dim=args.hash_dim,
                       hash_seed=args.hash_seed)


# hard defaults for training flags; a --config json file may override them,
# and explicit command-line flags override the file
TRAIN_DEFAULTS = {
    "epochs": 20, "batch_size": 128, "lr": 1e-2, "weight_decay": 0.0,
    "patience": 5, "hidden_dim": 64, "vib_latent_dim": 16, "dropout": 0.0,
    "layer_norm": False, "beta": 0.0, "gamma": 0.0, "cp_weight": 0.0,
    "structured_from": "sample", "seeds": "5",
}


def resolve_train_args(args) -> None:
    """Fill unset training flags from --config (json) or the defaults."""
    file_values: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        if not os.path.exists(config_path):
            raise DataError(f"config file not found: {config_path}")
        with open(config_path, encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(TRAIN_DEFAULTS)
        if unknown:
            raise DataError(f"{config_path}: unknown config keys {sorted(unknown)}")
    for key, default in TRAIN_DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key, default))


def _train_config(args, objective: ObjectiveConfig) -> TrainConfig:
    return TrainConfig(
        objective=objective,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        patience=args.patience,
        hidden_dim=args.hidden_dim,
        vib_latent_dim=args.vib_latent_dim,
        dropout=args.dropout,
        layer_norm=args.layer_norm,
    )


def _config_inputs(args, dataset_path: str, extra: dict | None = None) -> dict:
    inputs = {
        "data": dataset_path,
        "data_sha256": file_sha256(dataset_path),
        "task": args.task,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "weight_decay": args.weight_decay,
        "patience": args.patience,
        "hidden_dim": args.hidden_dim,
        "vib_latent_dim": args.vib_latent_dim,
        "dropout": args.dropout,
        "layer_norm": args.layer_norm,
        "hash_dim": args.hash_dim,
        "hash_seed": args.hash_seed,
    }
    if extra:
        inputs.update(extra)
    return inputs


# --- experiment protocols (importable; the commands are thin wrappers) ---

def noise_study(dataset: Dataset, cfg_base: TrainConfig, objectives: list[ObjectiveConfig],
                ratios: list[float], seeds: list[int]) -> list[dict]:
    """objective x ratio table; each cell averages runs over the seeds.

    The noise injection seed equals the run seed, so each seed sees its own
    corruption of the train split while val/test stay clean.
    """
    rows = []
    for objective in objectives:
        cfg = dataclasses.replace(cfg_base, objective=objective)
        for ratio in ratios:
            values = []
            for seed in seeds:
                noisy = dataio.inject_label_noise(
                    dataset, PerturbationSpec(noise_ratio=ratio, seed=seed))
                report = train(noisy, cfg, seed)
                values.append(report.headline_value)
            rows.append({
                "objective": objective.kind, "noise_ratio": ratio,
                "mean": float(np.mean(values)), "std": float(np.std(values)),
                "values": [float(v) for v in values],
            })
    return rows


def ratio_study(dataset: Dataset, cfg_base: TrainConfig, objectives: list[ObjectiveConfig],
                ratios: list[float], seeds: list[int]) -> list[dict]:
    """objective x train-ratio table; subsample seed equals the run seed."""
    rows = []
    for objective in objectives:
        cfg = dataclasses.replace(cfg_base, objective=objective)
        for ratio in ratios:
            values = []
            for seed in seeds:
                subset = dataio.subsample_train(dataset, ratio, seed=seed)
                report = train(subset, cfg, seed)
                values.append(report.headline_value)
            rows.append({
                "objective": objective.kind, "train_ratio": ratio,
                "mean": float(np.mean(values)), "std": float(np.std(values)),
                "values": [float(v) for v in values],
            })
    return rows


def read_label_mapping(path: str) -> dict[str, str]:
    """Two-column csv (source_label, target_label) -> {target: source}."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["source_label", "target_label"]:
            raise DataError(f"{path}: expected header 'source_label,target_label'")
        for row in reader:
            if len(row) < 2:
                continue
            source, target = row[0].strip(), row[1].strip()
            if target in mapping and mapping[target] != source:
                raise DataError(f"{path}: target label {target!r} mapped twice")
            mapping[target] = source
    if not mapping:
        raise DataError(f"{path}: empty mapping")
    return mapping


def ood_run(source_ds: Dataset, target_ds: Dataset, mapping: dict[str, str],
            cfg: TrainConfig, seeds: list[int]) -> dict:
    """Train on the source domain, evaluate on the mapped target test split.

    Target test rows whose label has no mapping into the source label set
    are excluded from evaluation (their count is reported). Model selection
    happens on the source validation split, exactly as in a plain run.
    """
    if source_ds.task != "classification" or target_ds.task != "classification":
        raise DataError("out-of-domain evaluation is defined for classification")
    if source_ds.num_features != target_ds.num_features:
        raise DataError("source and target feature dimensions differ")
    unknown_sources = sorted(set(mapping.values()) - set(source_ds.label_names))
    if unknown_sources:
        raise DataError(f"mapping uses labels absent from the source dataset: {unknown_sources}")

    test_idx = target_ds.indices("test")
    gold_names = [target_ds.label_names[int(target_ds.targets[i])] for i in test_idx]
    keep = [j for j, name in enumerate(gold_names) if name in mapping]
    excluded = len(gold_names) - len(keep)
    if not keep:
        raise DataError("no target test rows are covered by the label mapping")
    source_index = {name: i for i, name in enumerate(source_ds.label_names)}
    gold = np.array([source_index[mapping[gold_names[j]]] for j in keep], dtype=np.int64)
    features = target_ds.features[test_idx[keep]]

    per_seed = []
    for seed in seeds:
        report = train(source_ds, cfg, seed)
        outputs = model_outputs(report.model, features, "classification")
        pred = outputs.argmax(axis=1)
        per_seed.append({
            "seed": seed,
            "macro_f1": macro_f1(gold, pred, source_ds.num_classes),
            "source_test_macro_f1": report.test_metrics["macro_f1"],
        })
    values = [r["macro_f1"] for r in per_seed]
    return {
        "metric": "macro_f1",
        "mean": float(np.mean(values)),
        "std": float(np.std(values)),
        "per_seed": per_seed,
        "evaluated_rows": len(keep),
        "excluded_rows": excluded,
        "mapped_labels": sorted(mapping),
    }


def representation_quality(model: Model, dataset: Dataset,
                           kmeans_seeds: list[int] | None = None) -> dict:
    """Cluster the mean codes of the test split and score SC / ARI.

    Representations are mu(x) (the latent mean for the bottleneck model),
    clustered by k-means with k equal to the class count; the median over
    the k-means seeds is reported for both scores.
    """
    if dataset.task != "classification":
        raise DataError("representation quality is defined for classification")
    if kmeans_seeds is None:
        kmeans_seeds = [0, 1, 2, 3, 4]
    features, gold = dataset.subset("test")
    if isinstance(model, VibParams):
        code = encode(model.encoder_view(), Tensor(features))
    else:
        code = encode(model, Tensor(features))
    reps = code.mu.values
    per_seed = []
    for seed in kmeans_seeds:
        assign = kmeans(reps, dataset.num_classes, seed=seed)
        per_seed.append({
            "seed": seed,
            "silhouette": silhouette(reps, assign),
            "ari": adjusted_rand_index(assign, gold),
        })
    return {
        "silhouette_median": float(np.median([r["silhouette"] for r in per_seed])),
        "ari_median": float(np.median([r["ari"] for r in per_seed])),
        "per_seed": per_seed,
    }


# --- command handlers ---

def cmd_gen_data(args) -> int:
    ds = dataio.gen_mixture(args.classes, args.dim, args.per_class, args.sep, args.seed)
    path = args.output or default_data_path(args)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    dataio.save(ds, path)
    inputs = {"classes": args.classes, "dim": args.dim, "per_class": args.per_class,
              "sep": args.sep, "seed": args.seed, "output": path}
    run_dir, manifest = start_run(args, "gen-data", inputs)
    finish_run(run_dir, manifest, {
        "rows": ds.num_rows, "features": ds.num_features,
        "classes": ds.num_classes, "dataset_sha256": file_sha256(path),
    })
    print(f"wrote {ds.num_rows} rows to {path}")
    return EXIT_OK


def _seed_reports_artifacts(run_dir: str, reports: list[RunReport]) -> list[dict]:
    rows = []
    for report in reports:
        save_model(os.path.join(run_dir, "ckpt", f"seed{report.seed}.json"), report.model)
        row = {"seed": report.seed, "best_epoch": report.best_epoch,
               "epochs_ran": report.epochs_ran, "diverged": report.diverged}
        for name, value in report.test_metrics.items():
            if isinstance(value, float):
                row[f"test_{name}"] = value
        rows.append(row)
    return rows


def cmd_train(args) -> int:
    dataset = _load_dataset(args)
    objective = make_objective(args.objective, args.task, beta=args.beta,
                               gamma=args.gamma, cp_weight=args.cp_weight,
                               structured_from=args.structured_from)
    cfg = _train_config(args, objective)
    seeds = parse_seeds(args.seeds)
    inputs = _config_inputs(args, args.data or default_data_path(args), {
        "objective": dataclasses.asdict(objective), "seeds": seeds,
    })
    run_dir, manifest = start_run(args, "train", inputs)
    reports = run_seeds(dataset, cfg, tuple(seeds))
    rows = _seed_reports_artifacts(run_dir, reports)
    results = {
        "summary": summarize(reports),
        "per_seed": [r.results_dict() for r in reports],
    }
    finish_run(run_dir, manifest, results, csv_rows=rows,
               timing={"wall_clock": sum(r.wall_clock for r in reports)})
    summary = results["summary"]
    print(f"run {manifest['run_id']}: {summary['metric']} = "
          f"{summary['mean']:.4f} +/- {summary['std']:.4f} over seeds {seeds}")
    if any(r.diverged for r in reports):
        print("warning: at least one seed diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = _load_dataset(args)
    model = load_model(args.ckpt)
    metrics = evaluate_split(model, dataset, args.split)
    inputs = {"ckpt": args.ckpt, "ckpt_sha256": file_sha256(args.ckpt),
              "data": args.data or default_data_path(args),
              "data_sha256": file_sha256(args.data or default_data_path(args)),
              "split": args.split, "task": args.task}
    run_dir, manifest = start_run(args, "eval", inputs)
    finish_run(run_dir, manifest, {"metrics": metrics})
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    dataset = _load_dataset(args)
    objective = make_objective(args.objective, args.task, beta=args.beta,
                               gamma=args.gamma, structured_from=args.structured_from)
    cfg = _train_config(args, objective)
    seeds = parse_seeds(args.seeds)
    betas = parse_floats(args.betas)
    gammas = parse_floats(args.gammas) if args.objective == "spc" else [0.0]
    inputs = _config_inputs(args, args.data or default_data_path(args), {
        "objective": args.objective, "betas": betas, "gammas": gammas, "seeds": seeds,
    })
    run_dir, manifest = start_run(args, "sweep", inputs)
    result = sweep(dataset, cfg, betas, gammas, tuple(seeds))
    results = {"rows": result.rows, "best_beta": result.best_beta,
               "best_gamma": result.best_gamma}
    finish_run(run_dir, manifest, results, csv_rows=result.rows)
    print(f"run {manifest['run_id']}: best beta={result.best_beta} "
          f"gamma={result.best_gamma} (val {result.best_row()['val_mean']:.4f})")
    return EXIT_OK


def cmd_noise_study(args) -> int:
    dataset = _load_dataset(args)
    kinds = [k.strip() for k in args.objectives.split(",") if k.strip()]
    objectives = [make_objective(k, args.task, beta=args.beta, gamma=args.gamma,
                                 cp_weight=args.cp_weight,
                                 structured_from=args.structured_from) for k in kinds]
    cfg = _train_config(args, objectives[0])
    ratios = parse_floats(args.ratios)
    seeds = parse_seeds(args.seeds)
    inputs = _config_inputs(args, args.data or default_data_path(args), {
        "objectives": kinds, "ratios": ratios, "seeds": seeds,
        "beta": args.beta, "gamma": args.gamma,
    })
    run_dir, manifest = start_run(args, "noise-study", inputs)
    rows = noise_study(dataset, cfg, objectives, ratios, seeds)
    csv_rows = [{k: v for k, v in row.items() if k != "values"} for row in rows]
    finish_run(run_dir, manifest, {"rows": rows}, csv_rows=csv_rows)
    for row in rows:
        print(f"{row['objective']:>8} @ noise {row['noise_ratio']}: "
              f"{row['mean']:.4f} +/- {row['std']:.4f}")
    return EXIT_OK


def cmd_ratio_study(args) -> int:
    dataset = _load_dataset(args)
    kinds = [k.strip() for k in args.objectives.split(",") if k.strip()]
    objectives = [make_objective(k, args.task, beta=args.beta, gamma=args.gamma,
                                 cp_weight=args.cp_weight,
                                 structured_from=args.structured_from) for k in kinds]
    cfg = _train_config(args, objectives[0])
    ratios = parse_floats(args.ratios)
    seeds = parse_seeds(args.seeds)
    inputs = _config_inputs(args, args.data or default_data_path(args), {
        "objectives": kinds, "ratios": ratios, "seeds": seeds,
        "beta": args.beta, "gamma": args.gamma,
    })
    run_dir, manifest = start_run(args, "ratio-study", inputs)
    rows = ratio_study(dataset, cfg, objectives, ratios, seeds)
    csv_rows = [{k: v for k, v in row.items() if k != "values"} for row in rows]
    finish_run(run_dir, manifest, {"rows": rows}, csv_rows=csv_rows)
    for row in rows:
        print(f"{row['objective']:>8} @ ratio {row['train_ratio']}: "
              f"{row['mean']:.4f} +/- {row['std']:.4f}")
    return EXIT_OK


def cmd_ood(args) -> int:
    source = dataio.load(args.source, task="classification",
                         hash_dim=args.hash_dim, hash_seed=args.hash_seed)
    target = dataio.load(args.target, task="classification",
                         hash_dim=args.hash_dim, hash_seed=args.hash_seed)
    mapping = read_label_mapping(args.mapping)
    objective = make_objective(args.objective, "classification", beta=args.beta,
                               gamma=args.gamma, cp_weight=args.cp_weight,
                               structured_from=args.structured_from)
    cfg = _train_config(args, objective)
    seeds = parse_seeds(args.seeds)
    inputs = {"source": args.source, "source_sha256": file_sha256(args.source),
              "target": args.target, "target_sha256": file_sha256(args.target),
              "mapping": args.mapping, "mapping_sha256": file_sha256(args.mapping),
              "objective": dataclasses.asdict(objective), "seeds": seeds,
              "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr}
    run_dir, manifest = start_run(args, "ood", inputs)
    results = ood_run(source, target, mapping, cfg, seeds)
    finish_run(run_dir, manifest, results)
    print(f"run {manifest['run_id']}: target macro_f1 = {results['mean']:.4f} "
          f"+/- {results['std']:.4f} ({results['evaluated_rows']} rows evaluated, "
          f"{results['excluded_rows']} excluded)")
    return EXIT_OK


def cmd_repr_quality(args) -> int:
    dataset = _load_dataset(args)
    model = load_model(args.ckpt)
    seeds = parse_seeds(args.seeds)
    inputs = {"ckpt": args.ckpt, "ckpt_sha256": file_sha256(args.ckpt),
              "data": args.data or default_data_path(args),
              "data_sha256": file_sha256(args.data or default_data_path(args)),
              "kmeans_seeds": seeds}
    run_dir, manifest = start_run(args, "repr-quality", inputs)
    results = representation_quality(model, dataset, seeds)
    finish_run(run_dir, manifest, results)
    print(f"silhouette median {results['silhouette_median']:.4f}, "
          f"ari median {results['ari_median']:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    root = out_root(args)
    rows = []
    if os.path.isdir(root):
        for name in sorted(os.listdir(root)):
            manifest_path = os.path.join(root, name, "manifest.json")
            report_path = os.path.join(root, name, "report.json")
            if not (os.path.isfile(manifest_path) and os.path.isfile(report_path)):
                continue
            with open(manifest_path, encoding="utf-8") as fh:
                manifest = json.load(fh)
            with open(report_path, encoding="utf-8") as fh:
                results = json.load(fh)["results"]
            summary = results.get("summary", {})
            rows.append({
                "run_id": manifest["run_id"],
                "command": manifest["command"],
                "metric": summary.get("metric", ""),
                "mean": summary.get("mean", ""),
                "std": summary.get("std", ""),
            })
    if not rows:
        print(f"no runs found under {root}")
        return EXIT_OK
    path = os.path.join(root, "summary.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"{row['run_id']}  {row['command']:<12} {row['metric']} {row['mean']}")
    print(f"wrote {path}")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser, with_data: bool = True) -> None:
    parser.add_argument("--out", default=None, help="output root (default $SPC_OUT or ./out)")
    if with_data:
        parser.add_argument("--data", default=None, help="dataset file (jsonl or csv)")
        parser.add_argument("--task", default="classification",
                            choices=["classification", "regression"])
        parser.add_argument("--hash-dim", type=int, default=256, dest="hash_dim")
        parser.add_argument("--hash-seed", type=int, default=0, dest="hash_seed")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    # defaults are None so that a --config file can fill the gaps; see
    # resolve_train_args / TRAIN_DEFAULTS for the effective values
    parser.add_argument("--config", default=None,
                        help="json file of training keys; explicit flags win")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--hidden-dim", type=int, default=None, dest="hidden_dim")
    parser.add_argument("--vib-latent-dim", type=int, default=None, dest="vib_latent_dim")
    parser.add_argument("--dropout", type=float, default=None)
    parser.add_argument("--layer-norm", action=argparse.BooleanOptionalAction,
                        default=None, dest="layer_norm")
    parser.add_argument("--beta", type=float, default=None)
    parser.add_argument("--gamma", type=float, default=None)
    parser.add_argument("--cp-weight", type=float, default=None, dest="cp_weight")
    parser.add_argument("--structured-from", default=None,
                        choices=["sample", "mu"], dest="structured_from")
    parser.add_argument("--seeds", default=None,
                        help="count ('5' -> 0..4) or explicit list ('0,1,2')")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spc",
        description="Stochastic label-space coding experiments: train, sweep, "
                    "perturbation studies, and representation-quality reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a Gaussian-mixture dataset")
    _add_common(p, with_data=False)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--per-class", type=int, default=200, dest="per_class")
    p.add_argument("--sep", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None, help="dataset file to write")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train one objective over several seeds")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--objective", default="spc",
                   choices=["spc", "pc", "ce", "ce_cp", "vib", "mse", "mse_pc", "mse_vib"])
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="grid-search beta/gamma (or the ce_cp penalty weight)")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--objective", default="spc",
                   choices=["spc", "pc", "ce_cp", "vib", "mse_pc", "mse_vib"])
    p.add_argument("--betas", default="0.001,0.01,0.1,1,10")
    p.add_argument("--gammas", default="0.001,0.01,0.1,1,10")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("noise-study", help="label-noise robustness table")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--ratios", default="0.1,0.2,0.3")
    p.add_argument("--objectives", default="ce,spc")
    p.set_defaults(handler=cmd_noise_study)

    p = sub.add_parser("ratio-study", help="limited-training-data table")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--ratios", default="0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--objectives", default="ce,spc")
    p.set_defaults(handler=cmd_ratio_study)

    p = sub.add_parser("ood", help="train on a source domain, test on a mapped target")
    _add_common(p, with_data=False)
    _add_train_flags(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mapping", required=True,
                   help="csv with header source_label,target_label")
    p.add_argument("--objective", default="spc",
                   choices=["spc", "pc", "ce", "ce_cp", "vib"])
    p.add_argument("--hash-dim", type=int, default=256, dest="hash_dim")
    p.add_argument("--hash-seed", type=int, default=0, dest="hash_seed")
    p.set_defaults(handler=cmd_ood)

    p = sub.add_parser("repr-quality", help="cluster test-split codes; report SC/ARI")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seeds", default="5", help="k-means seeds (count or list)")
    p.set_defaults(handler=cmd_repr_quality)

    p = sub.add_parser("report", help="summarize all runs under the output root")
    _add_common(p, with_data=False)
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "epochs"):
            resolve_train_args(args)
        return args.handler(args)
    except (DataError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
