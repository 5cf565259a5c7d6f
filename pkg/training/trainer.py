"""
Trainer: fits the network, picks the best epoch and scores it

=== ONE EPOCH ===

    1. lr = lr_at_epoch(base_lr, epoch)
    2. shuffle the training samples (order depends only on seed and epoch)
    3. for each mini-batch of `batch_size` samples:
           forward -> L1 loss (normalized units) -> backward
           clip the global gradient norm -> Adam step
    4. validation MAE in persons per interval, averaged over horizons
    5. if it is the lowest so far, snapshot the parameters

A mini-batch is a list of whole samples. One sample holds every station,
because the GNN couples stations; stations are never split across batches.

=== WHAT COMES BACK ===

TrainResult(checkpoint, epoch_log). The checkpoint holds the best epoch's
weights, the normalizer fitted on the training split and the network, so
`evaluate(checkpoint, samples)` needs nothing else. The epoch log is a
DataFrame with columns epoch, lr, train_l1, val_mae.

If the loss or a gradient turns NaN/Inf, TrainingDiverged is raised; its
`last_good` attribute is the best checkpoint so far.
"""

import logging
from dataclasses import dataclass, replace
from itertools import product

import numpy as np
import pandas as pd

from autodiff.ops import l1_loss
from autodiff.optim import BASE_LR, clip_grad_norm, init_optimizer, lr_at_epoch, optimizer_step
from autodiff.tensor import Tape, Tensor, backward
from model.mpstn import (
    BATCH_SIZE_CHOICES,
    FEATURE_DIM_CHOICES,
    GNN_LAYER_CHOICES,
    WEATHER_EMBED_CHOICES,
    forward_batch,
    init_params,
    normalize_adjacency,
    params_from_arrays,
)
from pipeline.folding import fit_normalizer
from training.checkpoint import Checkpoint
from training.metrics import EvalReport
from utils.errors import ConfigError, DataError, NumericalError, ShapeError, TrainingDiverged
from utils.helpers import make_rng
from utils.storage import EPOCH_LOG_COLUMNS

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# CONFIGURATION
# ---------------------------------------------------------------------------
SHUFFLE_STREAM = 23
PREDICT_BATCH = 32
LOSSES = ("l1",)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    base_lr: float = BASE_LR
    batch_size: int = 8
    seed: int = 0
    grad_clip: float = 5.0
    patience: int = None       # epochs without a new best before stopping; None = never
    loss: str = "l1"

    def validate(self):
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if not self.base_lr > 0:
            problems.append("base_lr must be > 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            problems.append("grad_clip must be > 0 or null")
        if self.patience is not None and self.patience < 1:
            problems.append("patience must be >= 1 or null")
        if self.seed < 0:
            problems.append("seed must be >= 0")
        if self.loss not in LOSSES:
            problems.append(f"loss must be one of {LOSSES}")
        if problems:
            raise ConfigError("invalid TrainConfig: " + "; ".join(problems))
        return self


@dataclass(frozen=True, eq=False)
class TrainResult:
    checkpoint: Checkpoint
    epoch_log: pd.DataFrame


# ===========================================================================
# BATCHES
# ===========================================================================

def epoch_order(n_samples, seed, epoch):
    """Shuffle order for one epoch. Independent of the model, so every variant sees the same stream."""
    return make_rng(seed, SHUFFLE_STREAM, epoch).permutation(n_samples)


def assemble_batch(samples, normalizer):
    """
    Stacks samples into network inputs.

    Returns (windows [B,S,2,P,T], rain_flags [B], targets [B,S,2*Hs]), all
    normalized, targets laid out like the network output.
    """
    windows = normalizer.apply_window(np.stack([s.window for s in samples]))
    targets = normalizer.apply_targets(np.stack([s.targets for s in samples]))
    flags = np.array([s.rain_flag for s in samples], dtype=np.int64)
    b, s = targets.shape[:2]
    return windows, flags, targets.reshape(b, s, -1)


def check_samples(samples, config):
    """Raises DataError when the samples do not have the shape `config` was built for."""
    expected_window = (config.n_stations, config.channels, config.periods, config.intervals_per_day)
    expected_targets = (config.n_stations, config.channels, config.horizons)
    for sample in samples[:1]:
        if sample.window.shape != expected_window or sample.targets.shape != expected_targets:
            raise DataError(
                f"samples have window {sample.window.shape} / targets {sample.targets.shape}, "
                f"model config expects {expected_window} / {expected_targets}"
            )


def _batches(samples, order, batch_size):
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]


# ===========================================================================
# ONE STEP
# ===========================================================================

def train_step(params, state, batch, adjacency, config, lr, grad_clip=None):
    """
    Forward, L1 loss, backward and one optimizer update on a prepared batch.

    Returns (loss, pre-clip gradient norm). Raises NumericalError, leaving
    the parameters untouched, if the loss or any gradient is not finite.
    """
    windows, flags, targets = batch
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        out = forward_batch(windows, flags, params, adjacency, config)
        loss = l1_loss(out, Tensor(targets))
    value = loss.item()
    if not np.isfinite(value):
        raise NumericalError(f"training loss is {value}")
    backward(loss, tape)
    grads = {name: p.grad for name, p in params.items()}
    norm = clip_grad_norm(grads, grad_clip)
    optimizer_step(params, grads, state, lr=lr)
    return value, norm


# ===========================================================================
# PREDICTION & EVALUATION
# ===========================================================================

def _predict_raw(params, adjacency, config, normalizer, samples):
    """[N, S, 2, Hs] in persons per interval. No tape is opened."""
    chunks = []
    for start in range(0, len(samples), PREDICT_BATCH):
        part = samples[start:start + PREDICT_BATCH]
        windows, flags, _ = assemble_batch(part, normalizer)
        out = forward_batch(windows, flags, params, adjacency, config).data
        b, s = out.shape[:2]
        chunks.append(normalizer.invert_targets(out.reshape(b, s, config.channels, config.horizons)))
    return np.concatenate(chunks)


def predict(checkpoint, samples):
    """De-normalized predictions of a checkpoint, [N, S, 2, Hs]."""
    if not samples:
        raise DataError("predict needs at least one sample")
    config = checkpoint.config
    check_samples(samples, config)
    if checkpoint.network.n_stations != config.n_stations:
        raise DataError(f"checkpoint network has {checkpoint.network.n_stations} stations, "
                        f"config has {config.n_stations}")
    params = params_from_arrays(checkpoint.params, config)
    adjacency = normalize_adjacency(checkpoint.network)
    return _predict_raw(params, adjacency, config, checkpoint.normalizer, samples)


def evaluate(checkpoint, samples, interval_minutes=15):
    """EvalReport of a checkpoint on `samples`, scored in persons per interval."""
    pred = predict(checkpoint, samples)
    actual = np.stack([s.targets for s in samples])
    return EvalReport.from_arrays(pred, actual, variant=checkpoint.config.variant,
                                  interval_minutes=interval_minutes)


def _validation_mae(params, adjacency, config, normalizer, samples):
    pred = _predict_raw(params, adjacency, config, normalizer, samples)
    actual = np.stack([s.targets for s in samples])
    return EvalReport.from_arrays(pred, actual).mean_mae


# ===========================================================================
# TRAINING LOOP
# ===========================================================================

def _snapshot(params):
    return {name: p.data.copy() for name, p in params.items()}


def train(splits, network, model_config, train_config, on_epoch=None):
    """
    Trains one model and returns TrainResult(best checkpoint, epoch log).

    Args:
        splits: SampleSplits from build_dataset (raw units)
        network: the station NetworkSpec
        model_config: ModelConfig whose S / P / T / Hs match the samples
        train_config: TrainConfig
        on_epoch: optional callback(row dict) after every epoch
    """
    model_config.validate()
    train_config.validate()
    if not splits.train or not splits.val:
        raise DataError(f"training needs non-empty train and val splits "
                        f"(got {len(splits.train)} / {len(splits.val)} samples)")
    check_samples(splits.train, model_config)
    check_samples(splits.val, model_config)
    if network.n_stations != model_config.n_stations:
        raise DataError(f"network has {network.n_stations} stations, model config has {model_config.n_stations}")

    normalizer = fit_normalizer(splits.train, splits.station_ids)
    adjacency = normalize_adjacency(network)
    params = init_params(model_config, train_config.seed)
    state = init_optimizer(params, lr=train_config.base_lr)

    def checkpoint_of(arrays, epoch, val_mae, epochs_run):
        return Checkpoint(
            config=model_config,
            normalizer=normalizer,
            network=network,
            params=arrays,
            metadata={
                "epoch": epoch,
                "val_mae": val_mae,
                "epochs_run": epochs_run,
                "variant": model_config.variant,
                "seed": train_config.seed,
            },
        )

    rows = []
    best = None          # (val_mae, epoch, arrays)
    since_best = 0
    logger.info("training %s: %d train / %d val samples, %d epochs",
                model_config.variant, len(splits.train), len(splits.val), train_config.epochs)

    for epoch in range(train_config.epochs):
        lr = lr_at_epoch(train_config.base_lr, epoch)
        order = epoch_order(len(splits.train), train_config.seed, epoch)
        total, count = 0.0, 0
        for samples in _batches(splits.train, order, train_config.batch_size):
            batch = assemble_batch(samples, normalizer)
            try:
                loss, _ = train_step(params, state, batch, adjacency, model_config, lr, train_config.grad_clip)
            except NumericalError as e:
                last_good = checkpoint_of(best[2], best[1], best[0], epoch) if best else None
                raise TrainingDiverged(f"training diverged in epoch {epoch}: {e}", last_good=last_good) from e
            total += loss * len(samples)
            count += len(samples)

        val_mae = _validation_mae(params, adjacency, model_config, normalizer, splits.val)
        if not np.isfinite(val_mae):
            last_good = checkpoint_of(best[2], best[1], best[0], epoch) if best else None
            raise TrainingDiverged(f"validation MAE is {val_mae} after epoch {epoch}", last_good=last_good)

        row = {"epoch": epoch, "lr": lr, "train_l1": total / count, "val_mae": val_mae}
        rows.append(row)
        logger.info("epoch %d lr=%.6g train_l1=%.6f val_mae=%.4f", epoch, lr, row["train_l1"], val_mae)
        if on_epoch is not None:
            on_epoch(row)

        if best is None or val_mae < best[0]:
            best = (val_mae, epoch, _snapshot(params))
            since_best = 0
        else:
            since_best += 1
            if train_config.patience is not None and since_best >= train_config.patience:
                logger.info("early stop after epoch %d (best epoch %d)", epoch, best[1])
                break

    epoch_log = pd.DataFrame(rows, columns=EPOCH_LOG_COLUMNS)
    return TrainResult(checkpoint=checkpoint_of(best[2], best[1], best[0], len(rows)), epoch_log=epoch_log)


# ===========================================================================
# SHAPE DRY RUN
# ===========================================================================

def search_space():
    """Every (gnn_layers, feature_dim, weather_embed_dim, batch_size) point, in grid order."""
    return list(product(GNN_LAYER_CHOICES, FEATURE_DIM_CHOICES, WEATHER_EMBED_CHOICES, BATCH_SIZE_CHOICES))


def dry_run_shapes(samples, network, base_config, points=None, seed=0):
    """
    One forward + one update on throwaway parameters for each search point.

    Nothing is trained or kept. Returns one dict per point with the output
    shape and the loss. Shape problems raise ShapeError naming the stage.
    """
    if not samples:
        raise DataError("dry run needs at least one sample")
    check_samples(samples, base_config)
    normalizer = fit_normalizer(samples) if len(samples) >= 2 else fit_normalizer([samples[0], samples[0]])
    adjacency = normalize_adjacency(network)
    checked = []
    for gnn_layers, feature_dim, embed_dim, batch_size in (points or search_space()):
        config = replace(base_config, gnn_layers=gnn_layers, feature_dim=feature_dim,
                         weather_embed_dim=embed_dim).validate()
        batch_samples = [samples[i % len(samples)] for i in range(batch_size)]
        windows, flags, targets = assemble_batch(batch_samples, normalizer)
        params = init_params(config, seed)
        out_shape = tuple(forward_batch(windows, flags, params, adjacency, config).shape)
        if out_shape != targets.shape:
            raise ShapeError(f"output: network returns {out_shape}, targets are {targets.shape}")
        state = init_optimizer(params)
        loss, _ = train_step(params, state, (windows, flags, targets), adjacency, config, BASE_LR)
        checked.append({
            "gnn_layers": gnn_layers,
            "feature_dim": feature_dim,
            "weather_embed_dim": embed_dim,
            "batch_size": batch_size,
            "output_shape": list(out_shape),
            "loss": loss,
        })
        logger.debug("dry run ok: %s", checked[-1])
    return checked
