"""Batch front door: train sequences, evaluate compatibility, search galleries.

Commands read a single JSON config file with nested sections. Validation is
strict: any unknown key anywhere fails the run before artifacts are written,
because a silent config typo invalidates an experiment. With identical config
and seeds every command produces byte-identical primary outputs; wall-clock
timings live only in the manifest.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence.
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_model
from .data import (
    SyntheticSpec,
    generate_pairs,
    load_csv,
    load_pairs,
    make_synthetic,
    save_csv,
    save_pairs,
    split_tasks,
)
from .errors import (
    CompatLearnError,
    ConfigError,
    DataError,
    DivergenceError,
    MetricUndefinedError,
)
from .evalkit import (
    CompatibilityMatrix,
    build_compatibility_matrix,
    compatibility_report,
)
from .gallery import load_gallery, search
from .network import ModelConfig, TrainingHyperparams
from .trainer import ExperimentConfig, run_sequence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

MATRIX_SCHEMA = "compat-matrix/1"
REPORT_SCHEMA = "compat-report/1"
MANIFEST_SCHEMA = "run-manifest/1"


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


def _int_list(v):
    return isinstance(v, list) and all(_is_int(x) for x in v)


# Desk-scale preset. The synthetic dataset is a fixed benchmark: 20 training
# classes (capacity 20, feature dimension 19) plus 10 held-out evaluation
# classes, class means on an 8-dimensional subsphere of the 64-dimensional
# input space so that classes share structure the way natural data does.
# Rehearsal keeps 20 samples per class and the distillation weight base is 5.
DEFAULT_CONFIG = {
    "data": {
        "source": "synthetic",
        "csv_path": None,
        "num_classes": 30,
        "samples_per_class": 60,
        "input_dim": 64,
        "sigma": 0.4,
        "intrinsic_dim": 8,
        "mean_seed": 101,
        "noise_seed": 201,
        "eval_classes": 10,
        "num_tasks": 2,
        "split_seed": 301,
    },
    "model": {
        "hidden_layers": [64],
        "feature_dim": None,
        "nonlinearity": "tanh",
        "seed": 1,
    },
    "training": {
        "learning_rate": 0.02,
        "lr_milestones": [8, 12],
        "lr_decay_factor": 0.1,
        "weight_decay": 0.0002,
        "momentum": 0.9,
        "epochs_per_task": 14,
        "batch_size": 32,
        "lambda_base": 5.0,
    },
    "memory": {"per_class": 20},
    "trainer": {
        "classifier_mode": "fixed_simplex",
        "fd_mode": "memory_only",
        "train_seed": 11,
        "normalize_features": True,
    },
    "pairs": {"num_pairs": 6000, "seed": 401},
}

_VALIDATORS = {
    ("data", "source"): lambda v: v in ("synthetic", "csv"),
    ("data", "csv_path"): lambda v: v is None or isinstance(v, str),
    ("data", "num_classes"): lambda v: _is_int(v) and v >= 2,
    ("data", "samples_per_class"): lambda v: _is_int(v) and v >= 1,
    ("data", "input_dim"): lambda v: _is_int(v) and v >= 1,
    ("data", "sigma"): lambda v: _is_num(v) and v > 0,
    ("data", "intrinsic_dim"): lambda v: v is None or (_is_int(v) and v >= 1),
    ("data", "mean_seed"): _is_int,
    ("data", "noise_seed"): _is_int,
    ("data", "eval_classes"): lambda v: _is_int(v) and v >= 2,
    ("data", "num_tasks"): lambda v: _is_int(v) and v >= 1,
    ("data", "split_seed"): _is_int,
    ("model", "hidden_layers"): _int_list,
    ("model", "feature_dim"): lambda v: v is None or (_is_int(v) and v >= 1),
    ("model", "nonlinearity"): lambda v: v in ("relu", "tanh"),
    ("model", "seed"): _is_int,
    ("training", "learning_rate"): lambda v: _is_num(v) and v > 0,
    ("training", "lr_milestones"): _int_list,
    ("training", "lr_decay_factor"): lambda v: _is_num(v) and v > 0,
    ("training", "weight_decay"): lambda v: _is_num(v) and v >= 0,
    ("training", "momentum"): lambda v: _is_num(v) and 0 <= v < 1,
    ("training", "epochs_per_task"): lambda v: _is_int(v) and v >= 1,
    ("training", "batch_size"): lambda v: _is_int(v) and v >= 1,
    ("training", "lambda_base"): lambda v: _is_num(v) and v >= 0,
    ("memory", "per_class"): lambda v: _is_int(v) and v >= 0,
    ("trainer", "classifier_mode"): lambda v: v in ("fixed_simplex", "trainable"),
    ("trainer", "fd_mode"): lambda v: v in ("memory_only", "full_batch", "off"),
    ("trainer", "train_seed"): _is_int,
    ("trainer", "normalize_features"): lambda v: isinstance(v, bool),
    ("pairs", "num_pairs"): lambda v: _is_int(v) and v >= 2,
    ("pairs", "seed"): _is_int,
}


def validate_config(user: dict) -> dict:
    """Merge a user config over the defaults, rejecting any unknown key."""
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    merged = {section: dict(values) for section, values in DEFAULT_CONFIG.items()}
    for section, values in user.items():
        if section not in merged:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key, value in values.items():
            if key not in merged[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            merged[section][key] = value
    for (section, key), check in _VALIDATORS.items():
        value = merged[section][key]
        if not check(value):
            raise ConfigError(f"invalid value for {section}.{key}: {value!r}")
    if merged["data"]["source"] == "csv" and not merged["data"]["csv_path"]:
        raise ConfigError("data.source is 'csv' but data.csv_path is not set")
    return merged


def load_config(path) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        user = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return validate_config(user)


def apply_master_seed(config: dict, seed: int) -> dict:
    """Derive the training seeds from one master seed.

    Only training randomness changes: parameter initialization, shuffling,
    and memory sampling. The dataset, its task split, and the verification
    pairs are part of the preset (a fixed benchmark), so their seeds stay at
    their configured values.
    """
    out = {section: dict(values) for section, values in config.items()}
    base = int(seed) * 1000
    out["model"]["seed"] = base + 4
    out["trainer"]["train_seed"] = base + 5
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def experiment_components(config: dict):
    """Build (sequence, eval dataset, pairs, experiment config) from a config."""
    data_cfg = config["data"]
    if data_cfg["source"] == "csv":
        dataset = load_csv(data_cfg["csv_path"])
    else:
        dataset = make_synthetic(
            SyntheticSpec(
                num_classes=data_cfg["num_classes"],
                samples_per_class=data_cfg["samples_per_class"],
                input_dim=data_cfg["input_dim"],
                cluster_sigma=data_cfg["sigma"],
                intrinsic_dim=data_cfg["intrinsic_dim"],
                mean_seed=data_cfg["mean_seed"],
                noise_seed=data_cfg["noise_seed"],
            )
        )
    sequence, eval_dataset = split_tasks(
        dataset,
        num_tasks=data_cfg["num_tasks"],
        eval_class_count=data_cfg["eval_classes"],
        seed=data_cfg["split_seed"],
    )
    pairs = generate_pairs(
        eval_dataset,
        num_pairs=config["pairs"]["num_pairs"],
        seed=config["pairs"]["seed"],
        provenance="heldout-eval",
    )
    feature_dim = config["model"]["feature_dim"]
    if feature_dim is None:
        feature_dim = sequence.total_classes - 1
    model_cfg = ModelConfig(
        input_dim=dataset.input_dim,
        hidden_layers=tuple(config["model"]["hidden_layers"]),
        feature_dim=feature_dim,
        nonlinearity=config["model"]["nonlinearity"],
        seed=config["model"]["seed"],
    )
    hp = TrainingHyperparams(
        learning_rate=config["training"]["learning_rate"],
        lr_milestones=tuple(config["training"]["lr_milestones"]),
        lr_decay_factor=config["training"]["lr_decay_factor"],
        weight_decay=config["training"]["weight_decay"],
        momentum=config["training"]["momentum"],
        epochs_per_task=config["training"]["epochs_per_task"],
        batch_size=config["training"]["batch_size"],
        lambda_base=config["training"]["lambda_base"],
    )
    experiment = ExperimentConfig(
        model=model_cfg,
        hyperparams=hp,
        memory_per_class=config["memory"]["per_class"],
        classifier_mode=config["trainer"]["classifier_mode"],
        fd_mode=config["trainer"]["fd_mode"],
        train_seed=config["trainer"]["train_seed"],
        normalize_features=config["trainer"]["normalize_features"],
    )
    return sequence, eval_dataset, pairs, experiment


def write_manifest(out_dir: Path, config_text: str, task_seconds: list[float]) -> Path:
    artifacts = {}
    for path in sorted(out_dir.iterdir()):
        if path.name == "manifest.json" or not path.is_file():
            continue
        artifacts[path.name] = _sha256_file(path)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "config_sha256": hashlib.sha256(config_text.encode("utf-8")).hexdigest(),
        "artifacts": artifacts,
        "task_seconds": task_seconds,
        "created_unix": time.time(),
    }
    path = out_dir / "manifest.json"
    path.write_text(canonical_json(manifest))
    return path


def cmd_train(config_path, out_dir, seed: int | None = None) -> Path:
    """Run a full training sequence and write the experiment directory."""
    config = load_config(config_path)
    if seed is not None:
        config = apply_master_seed(config, seed)
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"output directory {out} exists and is not empty")
    sequence, eval_dataset, pairs, experiment = experiment_components(config)

    out.mkdir(parents=True, exist_ok=True)
    config_text = canonical_json(config)
    (out / "config.json").write_text(config_text)
    experiment = ExperimentConfig(
        model=experiment.model,
        hyperparams=experiment.hyperparams,
        memory_per_class=experiment.memory_per_class,
        classifier_mode=experiment.classifier_mode,
        fd_mode=experiment.fd_mode,
        train_seed=experiment.train_seed,
        normalize_features=experiment.normalize_features,
        output_dir=out,
    )
    timeline = run_sequence(experiment, sequence)
    save_csv(eval_dataset, out / "eval_data.csv")
    save_pairs(pairs, out / "pairs.csv")
    write_manifest(out, config_text, timeline.task_seconds)
    return out


def write_matrix_csv(matrix: CompatibilityMatrix, path) -> None:
    far = "none" if matrix.far_target is None else repr(matrix.far_target)
    lines = [
        f"# schema={MATRIX_SCHEMA} metric={matrix.metric} far_target={far} "
        f"tasks={matrix.num_tasks}"
    ]
    for row in matrix.values:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> CompatibilityMatrix:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or not lines[0].startswith("# schema="):
        raise DataError(f"{path}: missing matrix header line")
    header = dict(
        token.split("=", 1) for token in lines[0].lstrip("# ").split() if "=" in token
    )
    if header.get("schema") != MATRIX_SCHEMA:
        raise DataError(f"{path}: unsupported matrix schema {header.get('schema')!r}")
    far = None if header.get("far_target") == "none" else float(header["far_target"])
    try:
        values = np.array(
            [[float(v) for v in line.split(",")] for line in lines[1:]], dtype=np.float64
        )
    except ValueError as exc:
        raise DataError(f"{path}: malformed matrix row ({exc})") from exc
    return CompatibilityMatrix(values=values, metric=header["metric"], far_target=far)


def _report_payload(matrix: CompatibilityMatrix, include_thresholds: bool) -> dict:
    payload = {
        "schema": REPORT_SCHEMA,
        "metric": matrix.metric,
        "far_target": matrix.far_target,
        "tasks": matrix.num_tasks,
        "similarity": "cosine",
    }
    if matrix.num_tasks >= 2:
        report = compatibility_report(matrix)
        payload["ac"] = report.ac
        payload["bc"] = report.bc
        payload["fc"] = report.fc
        payload["bc_series"] = list(report.bc_series)
    if include_thresholds and matrix.thresholds is not None:
        payload["thresholds"] = [
            [None if np.isnan(v) else float(v) for v in row] for row in matrix.thresholds
        ]
    return payload


def cmd_eval(
    exp_dir,
    metric: str = "accuracy",
    far: float | None = None,
    out_dir=None,
    pairs_csv=None,
    eval_data_csv=None,
) -> tuple[Path, Path]:
    """Score an experiment directory into matrix.csv and report.json."""
    exp = Path(exp_dir)
    checkpoint_paths = sorted(exp.glob("checkpoint_task_*.ckpt"))
    if not checkpoint_paths:
        raise DataError(f"no checkpoints found in {exp}")
    models = [load_model(p) for p in checkpoint_paths]
    eval_csv = Path(eval_data_csv) if eval_data_csv else exp / "eval_data.csv"
    pairs_path = Path(pairs_csv) if pairs_csv else exp / "pairs.csv"
    if not eval_csv.exists() or not pairs_path.exists():
        raise DataError(f"pairs source missing: need {eval_csv} and {pairs_path}")
    eval_dataset = load_csv(eval_csv)
    pairs = load_pairs(pairs_path, eval_dataset)
    if metric == "tar_at_far" and far is None:
        raise ConfigError("metric tar_at_far requires --far")
    matrix = build_compatibility_matrix(models, pairs, metric=metric, far_target=far)
    out = Path(out_dir) if out_dir else exp
    out.mkdir(parents=True, exist_ok=True)
    matrix_path = out / "matrix.csv"
    report_path = out / "report.json"
    write_matrix_csv(matrix, matrix_path)
    report_path.write_text(canonical_json(_report_payload(matrix, include_thresholds=True)))
    return matrix_path, report_path


def cmd_search(gallery_path, queries_csv, checkpoint_path, top_n: int, out_path) -> Path:
    """Rank gallery entries for every query row; never touches the gallery file."""
    gallery = load_gallery(gallery_path)
    model = load_model(checkpoint_path)
    queries = load_csv(queries_csv)
    ranked = search(queries.inputs, model, gallery, top_n=top_n)
    out = Path(out_path)
    lines = ["query_index,query_label,rank,gallery_id,similarity"]
    for qi, (label, results) in enumerate(zip(queries.labels, ranked)):
        for rank, (gid, sim) in enumerate(results, start=1):
            lines.append(f"{qi},{int(label)},{rank},{gid},{repr(sim)}")
    out.write_text("\n".join(lines) + "\n")
    return out


def cmd_report(matrix_csv, out_path) -> Path:
    """Recompute the summary report from an existing matrix CSV."""
    matrix = read_matrix_csv(matrix_csv)
    out = Path(out_path)
    out.write_text(canonical_json(_report_payload(matrix, include_thresholds=False)))
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compatlearn",
        description="Train compatible representation sequences and evaluate them.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training sequence from a config file")
    p_train.add_argument("--config", required=True, help="path to the JSON config")
    p_train.add_argument("--out", required=True, help="experiment output directory")
    p_train.add_argument("--seed", type=int, default=None, help="master seed override")

    p_eval = sub.add_parser("eval", help="build the compatibility matrix and report")
    p_eval.add_argument("--exp", required=True, help="experiment directory from train")
    p_eval.add_argument("--metric", choices=("accuracy", "tar_at_far"), default="accuracy")
    p_eval.add_argument("--far", type=float, default=None, help="FAR target for tar_at_far")
    p_eval.add_argument("--out", default=None, help="output directory (default: the experiment)")
    p_eval.add_argument("--pairs", default=None, help="pairs CSV (default: <exp>/pairs.csv)")
    p_eval.add_argument(
        "--eval-data", default=None, help="held-out data CSV (default: <exp>/eval_data.csv)"
    )

    p_search = sub.add_parser("search", help="query a gallery file with a checkpoint")
    p_search.add_argument("--gallery", required=True)
    p_search.add_argument("--queries", required=True, help="query CSV (label + features)")
    p_search.add_argument("--checkpoint", required=True)
    p_search.add_argument("--top-n", type=int, default=1)
    p_search.add_argument("--out", required=True, help="ranked results CSV")

    p_report = sub.add_parser("report", help="recompute the report from a matrix CSV")
    p_report.add_argument("--matrix", required=True)
    p_report.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            out = cmd_train(args.config, args.out, seed=args.seed)
            print(f"experiment written to {out}")
        elif args.command == "eval":
            matrix_path, report_path = cmd_eval(
                args.exp,
                metric=args.metric,
                far=args.far,
                out_dir=args.out,
                pairs_csv=args.pairs,
                eval_data_csv=args.eval_data,
            )
            print(f"wrote {matrix_path} and {report_path}")
        elif args.command == "search":
            out = cmd_search(args.gallery, args.queries, args.checkpoint, args.top_n, args.out)
            print(f"wrote {out}")
        elif args.command == "report":
            out = cmd_report(args.matrix, args.out)
            print(f"wrote {out}")
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error[divergence]: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MetricUndefinedError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CompatLearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
