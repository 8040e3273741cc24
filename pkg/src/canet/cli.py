"""Command-line front end: synth, train, evaluate, export-embeddings.

Every command is a deterministic batch job: all randomness flows from one
seed, and identical inputs produce byte-identical outputs.  Exit codes:
0 success, 2 usage/config, 3 data, 4 numeric divergence.
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from canet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from canet.data import (DataError, downsample_median, load_csv, make_windows,
                        minmax_apply, minmax_fit, write_csv, NormStats)
from canet.detection import evaluate, prediction_errors, predict_series, write_scores_csv
from canet.graph import write_embeddings_csv
from canet.synth import place_segments, synth_generate
from canet.train import ConfigError, DivergenceError, TrainConfig, train

_FLAG_HELP = {
    "window": "history length per window",
    "layers": "encoder/decoder layer count",
    "heads": "attention heads per layer",
    "model_dim": "channel width of the model",
    "embed_dim": "sensor embedding width",
    "neighbor_k": "neighbour candidates kept per sensor",
    "retain": "share of the original state kept by graph propagation",
    "local_dim": "local-graph feature width (0 = model_dim)",
    "adjacency_norm": "global adjacency normalization: row or sym",
    "learned_positions": "learn the positional table instead of fixed sinusoids",
    "ablation": "model variant: " + ", ".join(
        ("none", "no-local-graph", "no-graph-conv", "no-ae", "no-rec-decoder")),
    "batch_size": "windows per optimizer step",
    "lr": "Adam learning rate",
    "lr_decay": "per-epoch learning-rate factor",
    "max_epochs": "training epoch cap",
    "patience": "epochs without validation improvement before stopping",
    "val_fraction": "series tail held out for validation",
    "phi_start": "prediction-loss weight before the switch epoch",
    "phi_late": "prediction-loss weight after the switch epoch",
    "switch_epoch": "last epoch on the early loss weights",
    "seed": "run seed (required for train)",
    "score_sensors": "deviations aggregated per timestamp",
    "calibration": "deviation calibration source: self or train",
    "can_plus": "fuse reconstruction deviation into the score",
    "downsample": "median-downsampling factor applied to input series",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canet",
        description="Multivariate time-series anomaly detection with coupled attention")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate synthetic train/test CSVs")
    p_synth.add_argument("--sensors", type=int, required=True)
    p_synth.add_argument("--length", type=int, required=True)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out", default=".", help="output directory")
    p_synth.add_argument("--spikes", type=int, default=0, help="number of spike segments")
    p_synth.add_argument("--drifts", type=int, default=0, help="number of drift segments")
    p_synth.add_argument("--stucks", type=int, default=0, help="number of stuck segments")
    p_synth.add_argument("--duration", type=int, default=10, help="timestamps per segment")
    p_synth.add_argument("--magnitude", type=float, default=5.0,
                         help="segment magnitude in training-std units")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    p_train.add_argument("--data", required=True, help="training CSV")
    p_train.add_argument("--config", help="key=value config file")
    p_train.add_argument("--out", default=".", help="output directory")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a labelled test series")
    p_eval.add_argument("--data", required=True, help="test CSV with a label column")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--out", default=".", help="output directory")
    p_eval.add_argument("--k-s", type=int, dest="k_s", default=None,
                        help="override the number of aggregated sensors")
    p_eval.add_argument("--calibration", choices=["self", "train"], default=None)
    p_eval.add_argument("--train-data", help="training CSV for calibration='train'")
    p_eval.add_argument("--can-plus", action="store_true", default=None,
                        help="fuse reconstruction deviation into the score")
    p_eval.add_argument("--batch-size", type=int, default=256)
    p_eval.set_defaults(func=cmd_evaluate)

    p_export = sub.add_parser("export-embeddings",
                              help="write learned sensor embeddings as CSV")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--out", default="embeddings.csv", help="output CSV path")
    p_export.set_defaults(func=cmd_export_embeddings)

    return parser


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool:
            parser.add_argument(flag, dest=f.name, default=None,
                                action=argparse.BooleanOptionalAction,
                                help=_FLAG_HELP.get(f.name, ""))
        else:
            parser.add_argument(flag, dest=f.name, type=f.type, default=None,
                                help=_FLAG_HELP.get(f.name, ""))


def parse_config_file(path) -> dict:
    """Flat key=value lines; '#' starts a comment, blank lines are skipped."""
    mapping = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def resolve_train_config(args) -> TrainConfig:
    """Config file first, then command-line flags on top."""
    mapping = parse_config_file(args.config) if args.config else {}
    cfg = TrainConfig.from_mapping(mapping)
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)
                 if getattr(args, f.name, None) is not None}
    if overrides:
        merged = cfg.to_dict()
        merged.update(overrides)
        cfg = TrainConfig(**merged)
    if getattr(args, "seed", None) is None and "seed" not in mapping:
        raise ConfigError("a seed is required: pass --seed or set seed= in the config file")
    return cfg


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    segments = []
    for kind, count in (("spike", args.spikes), ("drift", args.drifts), ("stuck", args.stucks)):
        segments.extend(place_segments(count, args.length, args.sensors, rng,
                                       duration=args.duration, magnitude=args.magnitude,
                                       kind=kind))
    result = synth_generate(args.sensors, args.length, args.seed, segments)
    write_csv(out / "train.csv", result.train)
    write_csv(out / "test.csv", result.test)
    graph = {
        "sensors": result.train.sensor_names,
        "clusters": result.clusters,
        "adjacency": result.adjacency.tolist(),
        "anomalies": [
            {"start": s.start, "duration": s.duration, "sensors": s.sensors,
             "kind": s.kind, "magnitude": s.magnitude}
            for s in segments
        ],
    }
    (out / "truth-graph.json").write_text(json.dumps(graph, sort_keys=True, indent=2) + "\n")
    print(f"wrote {out / 'train.csv'}, {out / 'test.csv'}, {out / 'truth-graph.json'}")
    return 0


def _load_normalized(path, cfg_downsample: int, stats: "NormStats | None"):
    series = load_csv(_require_file(path, "data file"))
    series = downsample_median(series, cfg_downsample)
    if stats is None:
        stats = minmax_fit(series)
    return minmax_apply(series, stats), stats


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    normalized, stats = _load_normalized(args.data, cfg.downsample, None)
    dataset = make_windows(normalized, cfg.window)
    resolved = cfg.to_dict()
    print("resolved config: " + json.dumps(resolved, sort_keys=True))
    (out / "config.txt").write_text(
        "".join(f"{k}={resolved[k]}\n" for k in sorted(resolved)))

    model, log = train(dataset, cfg)

    extra = {
        "sensor_names": normalized.sensor_names,
        "norm_min": [float(v) for v in stats.minimum],
        "norm_max": [float(v) for v in stats.maximum],
        "train_config": resolved,
    }
    save_checkpoint(model, out / "model.ckpt", extra)
    with open(out / "train.log", "w") as handle:
        for entry in log.epochs:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")
    print(f"best epoch {log.best_epoch} (val loss {log.best_val_loss:.6f}), "
          f"{log.n_parameters} parameters")
    print(f"wrote {out / 'model.ckpt'} and {out / 'train.log'}")
    return 0


def cmd_evaluate(args) -> int:
    model, extra = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    train_cfg = extra.get("train_config", {})
    factor = int(train_cfg.get("downsample", 1))
    stats = NormStats(minimum=np.asarray(extra["norm_min"], dtype=np.float64),
                      maximum=np.asarray(extra["norm_max"], dtype=np.float64))

    series = load_csv(_require_file(args.data, "data file"))
    if series.n_sensors != model.config.n_sensors:
        raise DataError(
            f"data has {series.n_sensors} sensors but the checkpoint expects "
            f"{model.config.n_sensors}")
    series = downsample_median(series, factor)
    if series.labels is None:
        raise DataError(f"{args.data} has no label column; evaluation needs ground truth")
    normalized = minmax_apply(series, stats)
    dataset = make_windows(normalized, model.config.window)

    k_s = args.k_s if args.k_s is not None else int(train_cfg.get("score_sensors", 2))
    calibration = args.calibration or str(train_cfg.get("calibration", "self"))
    can_plus = bool(train_cfg.get("can_plus", False)) if args.can_plus is None else args.can_plus

    calibration_errors = None
    if calibration == "train":
        if not args.train_data:
            raise ConfigError("--calibration train needs --train-data")
        train_norm, _ = _load_normalized(args.train_data, factor, stats)
        train_windows = make_windows(train_norm, model.config.window)
        preds, _ = predict_series(model, train_windows, batch_size=args.batch_size)
        calibration_errors = prediction_errors(
            preds, train_windows.values[:, model.config.window:].astype(np.float64))

    report = evaluate(model, dataset, series.labels, score_sensors=k_s,
                      calibration=calibration, calibration_errors=calibration_errors,
                      can_plus=can_plus, batch_size=args.batch_size)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n")
    write_scores_csv(out / "scores.csv", report, series.labels)
    print(f"precision={report.precision:.4f} recall={report.recall:.4f} f1={report.f1:.4f} "
          f"threshold={report.threshold:.6g}")
    return 0


def cmd_export_embeddings(args) -> int:
    model, extra = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    names = extra.get("sensor_names") or [str(i) for i in range(model.config.n_sensors)]
    write_embeddings_csv(args.out, names, model.embedding.data)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
