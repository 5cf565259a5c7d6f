"""
Command line: generate data, train, evaluate, search, ablate, report

Run from the project root:

    python cli.py gen    --out data/ [--config gen.json] [--seed 7]
    python cli.py train  --data data/ --out runs/a [--model-config m.json]
                         [--train-config t.json] [--split-config s.json] [--dry-run]
    python cli.py eval   --data data/ --checkpoint runs/a/checkpoint.mpstn --out runs/a [--baselines]
    python cli.py grid   --data data/ --out runs/grid --budget 4
    python cli.py ablate --data data/ --out runs/ablation
    python cli.py report --data data/ --run runs/a

Every command writes a manifest next to its outputs with the resolved
configs, the seed, content hashes of every input and a status field: gen,
train, grid and ablate write manifest.json, eval writes eval_manifest.json and
report writes report_manifest.json, so scoring a run never replaces the
manifest of the command that produced it. A run that fails halfway still
writes its manifest, with status "failed" and partial = true.

Horizon labels use the interval length recorded in the data directory's
manifest (15 minutes when the data did not come from gen).

Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numerical failure.
Log verbosity: --log-level or $MPSTN_LOG_LEVEL.
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from model.mpstn import ModelConfig
from pipeline.folding import build_dataset, chronological_split
from pipeline.synthgen import GenConfig, generate_corpus
from training.baselines import BASELINE_KINDS, fit_baseline, predict_baseline
from training.checkpoint import load_checkpoint, save_checkpoint
from training.experiments import ablate, grid_search
from training.metrics import DEFAULT_INTERVAL_MINUTES, EvalReport
from training.report import prediction_series, render_markdown_report, write_prediction_series
from training.trainer import TrainConfig, dry_run_shapes, evaluate, predict, train
from utils.errors import ConfigError, DataError, MPSTNError, NumericalError, TrainingDiverged
from utils.helpers import LOG_LEVEL_ENV, TOOL_VERSION, config_from_dict, config_to_dict, file_sha256, load_config, setup_logging
from utils.storage import (
    ABLATION_FILE,
    BASELINE_REPORT_FILE,
    CHECKPOINT_FILE,
    EDGES_FILE,
    EPOCH_LOG_COLUMNS,
    EPOCH_LOG_FILE,
    EVAL_MANIFEST_FILE,
    EVAL_REPORT_COLUMNS,
    EVAL_REPORT_FILE,
    FLOWS_FILE,
    GRID_RESULTS_FILE,
    MANIFEST_FILE,
    REPORT_FILE,
    REPORT_MANIFEST_FILE,
    WEATHER_FILE,
    atomic_write_text,
    load_corpus,
    read_frame,
    read_manifest,
    read_run_manifest,
    write_edges,
    write_flows,
    write_frame,
    write_manifest,
    write_weather,
)

logger = logging.getLogger("mpstn.cli")

# ---------------------------------------------------------------------------
# CONFIGURATION
# ---------------------------------------------------------------------------
EXIT_OK = 0
EXIT_IO = 2
DATA_FILES = (FLOWS_FILE, WEATHER_FILE, EDGES_FILE)


@dataclass(frozen=True)
class SplitConfig:
    """Calendar split of the corpus: train days, then val days, the rest is test."""

    train_days: int = 70
    val_days: int = 7
    excluded_dates: tuple = ()

    def validate(self):
        if self.train_days < 1 or self.val_days < 1:
            raise ConfigError("train_days and val_days must be >= 1")
        return self

    def to_split(self, start_date, days):
        return chronological_split(start_date, days, self.train_days, self.val_days, self.excluded_dates)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with code 1 like every other configuration error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ===========================================================================
# SHARED PLUMBING
# ===========================================================================

def _hashes(paths):
    return {str(p): file_sha256(p) for p in paths if p is not None and Path(p).exists()}


def _manifest(command, args, configs, inputs, outputs, seed=None, **extra):
    manifest = {
        "command": command,
        "tool_version": TOOL_VERSION,
        "argv": {k: (str(v) if isinstance(v, Path) else v)
                 for k, v in sorted(vars(args).items()) if k != "handler"},
        "config": {name: config_to_dict(c) for name, c in configs.items()},
        "seed": seed,
        "inputs": _hashes(inputs),
        "outputs": sorted(outputs),
        "status": "complete",
        "partial": False,
    }
    manifest.update(extra)
    return manifest


def _resolve_model_config(path, series):
    """
    ModelConfig from a JSON file, with S and T taken from the data.

    A file that sets n_stations / intervals_per_day to something other than
    the data is a config error.
    """
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: ModelConfig must be a JSON object")
    first = series[min(series)]
    actual = {"n_stations": len(series), "intervals_per_day": first.intervals_per_day}
    for key, value in actual.items():
        if key in data and data[key] != value:
            raise ConfigError(f"model config sets {key}={data[key]} but the data has {value}")
        data[key] = value
    return config_from_dict(ModelConfig, data)


def _build_splits(corpus, split_config, periods, horizons):
    """corpus: (series, weather, network) from load_corpus."""
    series, weather, _ = corpus
    first = series[min(series)]
    split = split_config.to_split(first.start_date, first.days)
    splits = build_dataset(series, weather, split, periods, horizons)
    logger.info("samples: %d train / %d val / %d test",
                len(splits.train), len(splits.val), len(splits.test))
    return splits


def _data_inputs(data_dir):
    return [Path(data_dir) / name for name in DATA_FILES]


def _interval_minutes(data_dir):
    """Interval length gen recorded for `data_dir`; the default for hand-made data."""
    if not (Path(data_dir) / MANIFEST_FILE).exists():
        return DEFAULT_INTERVAL_MINUTES
    minutes = read_manifest(data_dir).get("config", {}).get("gen", {}).get("interval_minutes")
    if minutes is None:
        return DEFAULT_INTERVAL_MINUTES
    if not isinstance(minutes, int) or isinstance(minutes, bool) or minutes < 1:
        raise DataError(f"{Path(data_dir) / MANIFEST_FILE}: interval_minutes must be a positive integer")
    return minutes


def _failed(out_dir, manifest, error):
    manifest.update(status="failed", partial=True, error=str(error))
    write_manifest(out_dir, manifest)


# ===========================================================================
# COMMANDS
# ===========================================================================

def cmd_gen(args):
    config = load_config(args.config, GenConfig)
    if args.seed is not None:
        config = replace(config, seed=args.seed).validate()
    out = Path(args.out)
    corpus = generate_corpus(config)
    write_flows(corpus.series, out / FLOWS_FILE)
    write_weather(corpus.weather.as_dict(), out / WEATHER_FILE)
    write_edges(corpus.network, out / EDGES_FILE)
    write_manifest(out, _manifest(
        "gen", args, {"gen": config}, [args.config], DATA_FILES, seed=config.seed,
        network=corpus.network.to_dict(),
    ))
    logger.info("wrote %s", out)


def _train_configs(args):
    train_config = load_config(args.train_config, TrainConfig)
    overrides = {k: v for k, v in (("seed", args.seed), ("epochs", args.epochs)) if v is not None}
    if overrides:
        train_config = replace(train_config, **overrides).validate()
    split_config = load_config(args.split_config, SplitConfig)
    return train_config, split_config


def cmd_train(args):
    train_config, split_config = _train_configs(args)
    corpus = load_corpus(args.data)
    network = corpus[2]
    model_config = _resolve_model_config(args.model_config, corpus[0])
    splits = _build_splits(corpus, split_config, model_config.periods, model_config.horizons)
    out = Path(args.out)
    configs = {"model": model_config, "train": train_config, "split": split_config}
    inputs = _data_inputs(args.data) + [args.model_config, args.train_config, args.split_config]

    if args.dry_run:
        checked = dry_run_shapes(splits.train, network, model_config, seed=train_config.seed)
        logger.info("dry run: %d configurations passed the shape check", len(checked))
        write_manifest(out, _manifest("train", args, configs, inputs, [], seed=train_config.seed,
                                      status="dry-run", checked=checked))
        return

    rows = []
    manifest = _manifest("train", args, configs, inputs, [CHECKPOINT_FILE, EPOCH_LOG_FILE], seed=train_config.seed)
    try:
        result = train(splits, network, model_config, train_config, on_epoch=rows.append)
    except TrainingDiverged as e:
        write_frame(pd.DataFrame(rows, columns=EPOCH_LOG_COLUMNS), out / EPOCH_LOG_FILE)
        if e.last_good is not None:
            save_checkpoint(e.last_good, out / CHECKPOINT_FILE)
        _failed(out, manifest, e)
        raise
    save_checkpoint(result.checkpoint, out / CHECKPOINT_FILE)
    write_frame(result.epoch_log, out / EPOCH_LOG_FILE)
    manifest["best_epoch"] = result.checkpoint.metadata["epoch"]
    manifest["best_val_mae"] = result.checkpoint.metadata["val_mae"]
    write_manifest(out, manifest)
    logger.info("best epoch %d, val MAE %.4f", manifest["best_epoch"], manifest["best_val_mae"])


def _check_network(checkpoint, network):
    if tuple(checkpoint.network.edges) != tuple(network.edges) or checkpoint.network.n_stations != network.n_stations:
        raise DataError("checkpoint was trained on a different station network than the data directory holds")


def cmd_eval(args):
    split_config = load_config(args.split_config, SplitConfig)
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.config
    corpus = load_corpus(args.data)
    network = corpus[2]
    splits = _build_splits(corpus, split_config, config.periods, config.horizons)
    _check_network(checkpoint, network)
    samples = splits[args.split]
    if not samples:
        raise DataError(f"the {args.split} split has no samples")

    out = Path(args.out)
    minutes = _interval_minutes(args.data)
    report = evaluate(checkpoint, samples, interval_minutes=minutes)
    write_frame(report.to_frame()[EVAL_REPORT_COLUMNS], out / EVAL_REPORT_FILE)
    outputs = [EVAL_REPORT_FILE]
    if args.baselines:
        frames = []
        actual = np.stack([s.targets for s in samples])
        for kind in BASELINE_KINDS:
            predictor = fit_baseline(kind, splits.train)
            pred = np.stack([predict_baseline(predictor, s).reshape(actual.shape[1:]) for s in samples])
            frames.append(EvalReport.from_arrays(pred, actual, variant=kind, interval_minutes=minutes).to_frame())
        write_frame(pd.concat(frames, ignore_index=True)[EVAL_REPORT_COLUMNS], out / BASELINE_REPORT_FILE)
        outputs.append(BASELINE_REPORT_FILE)
    write_manifest(out, _manifest(
        "eval", args, {"model": config, "split": split_config},
        _data_inputs(args.data) + [args.checkpoint, args.split_config], outputs,
        seed=checkpoint.metadata.get("seed"), split=args.split, interval_minutes=minutes,
    ), EVAL_MANIFEST_FILE)
    logger.info("%s MAE by horizon: %s", args.split, ", ".join(f"{m:.3f}" for m in report.mae))


def cmd_grid(args):
    train_config, split_config = _train_configs(args)
    corpus = load_corpus(args.data)
    network = corpus[2]
    base_config = _resolve_model_config(args.model_config, corpus[0])
    splits = _build_splits(corpus, split_config, base_config.periods, base_config.horizons)
    out = Path(args.out)
    result = grid_search(splits, network, train_config, budget=args.budget, base_config=base_config)
    write_frame(result.results, out / GRID_RESULTS_FILE)

    manifest = _manifest(
        "grid", args, {"model": base_config, "train": train_config, "split": split_config},
        _data_inputs(args.data) + [args.model_config, args.train_config, args.split_config],
        [GRID_RESULTS_FILE, CHECKPOINT_FILE, EPOCH_LOG_FILE], seed=train_config.seed,
        budget=args.budget, errors=result.errors,
    )
    if result.best is None:
        error = NumericalError(f"all {len(result.results)} grid points failed")
        _failed(out, manifest, error)
        raise error
    save_checkpoint(result.best.checkpoint, out / CHECKPOINT_FILE)
    write_frame(result.best.epoch_log, out / EPOCH_LOG_FILE)
    manifest["best"] = config_to_dict(result.best_config)
    manifest["best_train"] = config_to_dict(result.best_train_config)
    if result.errors:
        manifest["partial"] = True
    write_manifest(out, manifest)


def cmd_ablate(args):
    train_config, split_config = _train_configs(args)
    corpus = load_corpus(args.data)
    network = corpus[2]
    base_config = _resolve_model_config(args.model_config, corpus[0])
    splits = _build_splits(corpus, split_config, base_config.periods, base_config.horizons)
    out = Path(args.out)
    result = ablate(splits, network, base_config, train_config, interval_minutes=_interval_minutes(args.data))
    write_frame(result.table, out / ABLATION_FILE)
    outputs = [ABLATION_FILE]
    for variant, log in result.epoch_logs.items():
        write_frame(log, out / f"epoch_log_{variant}.csv")
        outputs.append(f"epoch_log_{variant}.csv")
    write_manifest(out, _manifest(
        "ablate", args, {"model": base_config, "train": train_config, "split": split_config},
        _data_inputs(args.data) + [args.model_config, args.train_config, args.split_config],
        outputs, seed=train_config.seed,
    ))
    for variant, report in result.reports.items():
        logger.info("%s: test MAE %.4f", variant, report.mean_mae)


def cmd_report(args):
    run = Path(args.run)
    manifest = read_run_manifest(run)
    comparison = {}
    for name in (BASELINE_REPORT_FILE, EVAL_REPORT_FILE):
        path = run / name
        if path.exists():
            frame = read_frame(path, EVAL_REPORT_COLUMNS).astype({"horizon_min": int, "mae": float, "rmse": float})
            for variant, rows in frame.groupby("variant", sort=False):
                label = "MPSTN" if name == EVAL_REPORT_FILE and variant == "full" else variant
                comparison[label] = EvalReport.from_frame(rows)

    ablation = pd.read_csv(run / ABLATION_FILE) if (run / ABLATION_FILE).exists() else None
    grid = pd.read_csv(run / GRID_RESULTS_FILE) if (run / GRID_RESULTS_FILE).exists() else None

    outputs = [REPORT_FILE]
    inputs = [run / name for name in (EVAL_REPORT_FILE, BASELINE_REPORT_FILE, ABLATION_FILE, GRID_RESULTS_FILE)]
    configs = {}
    if (run / CHECKPOINT_FILE).exists() and args.data is not None:
        split_config = load_config(args.split_config, SplitConfig)
        configs["split"] = split_config
        checkpoint = load_checkpoint(run / CHECKPOINT_FILE)
        config = checkpoint.config
        corpus = load_corpus(args.data)
        _check_network(checkpoint, corpus[2])
        splits = _build_splits(corpus, split_config, config.periods, config.horizons)
        samples = splits["test"]
        if samples:
            series_frame = prediction_series(predict(checkpoint, samples), samples, splits.station_ids,
                                             interval_minutes=_interval_minutes(args.data))
            paths = write_prediction_series(series_frame, run)
            outputs += [str(p.relative_to(run)) for p in paths]
        inputs += [run / CHECKPOINT_FILE] + _data_inputs(args.data) + [args.split_config]

    text = render_markdown_report(comparison=comparison, ablation=ablation, grid=grid, manifest=manifest)
    atomic_write_text(run / REPORT_FILE, text)
    write_manifest(run, _manifest("report", args, configs, inputs, outputs, seed=manifest.get("seed"),
                                  run_command=manifest.get("command")), REPORT_MANIFEST_FILE)
    logger.info("wrote %s", run / REPORT_FILE)


# ===========================================================================
# ARGUMENT PARSING
# ===========================================================================

def _add_training_args(p):
    p.add_argument("--data", required=True, type=Path, help="directory with flows.csv, weather.csv, edges.csv")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--model-config", type=Path)
    p.add_argument("--train-config", type=Path)
    p.add_argument("--split-config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)


def build_parser():
    parser = _Parser(prog="mpstn", description="Multi-period spatial-temporal passenger flow forecaster")
    parser.add_argument("--log-level", help=f"overrides ${LOG_LEVEL_ENV}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("train", help="train one model")
    _add_training_args(p)
    p.add_argument("--dry-run", action="store_true", help="check shapes for every search point, train nothing")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--split-config", type=Path)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--baselines", action="store_true", help="also score the reference predictors")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("grid", help="hyperparameter grid search")
    _add_training_args(p)
    p.add_argument("--budget", type=int, help="number of search points to train (default: all)")
    p.set_defaults(handler=cmd_grid)

    p = sub.add_parser("ablate", help="train and compare full / no_gnn / no_weather")
    _add_training_args(p)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("report", help="Markdown tables and per-station prediction series")
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--split-config", type=Path)
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_level)
        args.handler(args)
    except MPSTNError as e:
        logger.error("%s", e)
        return e.exit_code
    except OSError as e:
        logger.error("%s", e)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
