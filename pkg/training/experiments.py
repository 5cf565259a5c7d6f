"""
Experiments: hyperparameter grid search and the ablation runs

=== GRID SEARCH ===

The search space is the cross product

    gnn_layers (1, 2, 4) x feature_dim (64, 128, 256)
        x weather_embed_dim (2, 4) x batch_size (4, 8, 16)      = 54 points

enumerated in that fixed order and cut to the first `budget` points. Every
point trains from its own seed, derived from the run seed and the point's
index, and is ranked by its best validation MAE. Ties go to the smaller
feature_dim, then to fewer GNN layers.

A point that fails (diverges, bad shapes) is recorded in `errors` and in
the results table with status "failed"; the search carries on, the same way
a data source that fails does not stop the others from loading.

=== ABLATION ===

The same ModelConfig and TrainConfig are trained three times:

    full         CNN + weather embedding + GNN
    no_gnn       GNN replaced by one affine layer (stations predicted independently)
    no_weather   no rain embedding

Seeds, shuffle order and hyperparameters are identical; only the removed
part differs. Each variant is then scored on the test split.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from model.mpstn import VARIANTS, variant_config
from training.trainer import evaluate, search_space, train
from utils.errors import ConfigError, DataError, MPSTNError
from utils.helpers import derive_seed

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# CONFIGURATION
# ---------------------------------------------------------------------------
GRID_COLUMNS = [
    "rank", "point", "gnn_layers", "feature_dim", "weather_embed_dim", "batch_size",
    "seed", "best_epoch", "val_mae", "status", "error",
]
ABLATION_COLUMNS = ["horizon_min", "mae", "rmse", "variant"]


@dataclass(eq=False)
class GridResult:
    results: pd.DataFrame            # GRID_COLUMNS, ranked
    best: object = None              # TrainResult of the top-ranked point
    best_config: object = None       # its ModelConfig
    best_train_config: object = None
    errors: list = field(default_factory=list)


@dataclass(eq=False)
class AblationResult:
    reports: dict                    # variant -> EvalReport
    table: pd.DataFrame              # ABLATION_COLUMNS, one row per (variant, horizon)
    epoch_logs: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)


# ===========================================================================
# GRID SEARCH
# ===========================================================================

def rank_key(row):
    """Sort key: validation MAE, then smaller feature_dim, then fewer GNN layers."""
    return row["val_mae"], row["feature_dim"], row["gnn_layers"]


def grid_search(splits, network, train_config, budget=None, base_config=None, on_point=None):
    """
    Trains the first `budget` points of the search space.

    Args:
        splits: SampleSplits (train and val are used)
        network: the station NetworkSpec
        train_config: TrainConfig; its batch_size and seed are replaced per point
        budget: number of points to train (None = all 54)
        base_config: ModelConfig giving S / P / T / Hs and the variant flags
        on_point: optional callback(row dict) after each point

    Returns:
        GridResult
    """
    points = search_space()
    if budget is None:
        budget = len(points)
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    if base_config is None:
        raise ConfigError("grid_search needs a base ModelConfig")

    rows = []
    errors = []
    best = None          # (key, TrainResult, ModelConfig, TrainConfig)

    for index, (gnn_layers, feature_dim, embed_dim, batch_size) in enumerate(points[:budget]):
        model_config = replace(base_config, gnn_layers=gnn_layers, feature_dim=feature_dim,
                               weather_embed_dim=embed_dim)
        point_train = replace(train_config, batch_size=batch_size, seed=derive_seed(train_config.seed, index))
        row = {
            "rank": None,
            "point": index,
            "gnn_layers": gnn_layers,
            "feature_dim": feature_dim,
            "weather_embed_dim": embed_dim,
            "batch_size": batch_size,
            "seed": point_train.seed,
            "best_epoch": None,
            "val_mae": np.nan,
            "status": "ok",
            "error": "",
        }
        logger.info("grid point %d/%d: layers=%d F=%d E=%d batch=%d",
                    index + 1, budget, gnn_layers, feature_dim, embed_dim, batch_size)
        try:
            result = train(splits, network, model_config, point_train)
        except MPSTNError as e:
            logger.warning("grid point %d failed: %s", index, e)
            row.update(status="failed", error=str(e))
            errors.append({"point": index, "error": str(e)})
        else:
            row.update(best_epoch=result.checkpoint.metadata["epoch"],
                       val_mae=result.checkpoint.metadata["val_mae"])
            key = rank_key(row)
            if best is None or key < best[0]:
                best = (key, result, model_config, point_train)
        rows.append(row)
        if on_point is not None:
            on_point(row)

    ok = sorted((r for r in rows if r["status"] == "ok"), key=rank_key)
    failed = [r for r in rows if r["status"] != "ok"]
    for rank, row in enumerate(ok, start=1):
        row["rank"] = rank
    results = pd.DataFrame(ok + failed, columns=GRID_COLUMNS)
    results["rank"] = results["rank"].astype("Int64")
    results["best_epoch"] = results["best_epoch"].astype("Int64")

    if best is None:
        return GridResult(results=results, errors=errors)
    return GridResult(results=results, best=best[1], best_config=best[2],
                      best_train_config=best[3], errors=errors)


# ===========================================================================
# ABLATION
# ===========================================================================

def ablate(splits, network, base_config, train_config, variants=VARIANTS, interval_minutes=15):
    """
    Trains each variant with identical settings and scores it on the test split.

    Returns an AblationResult whose `table` has one row per (variant, horizon).
    """
    if not splits.test:
        raise DataError("ablation needs a non-empty test split")
    reports, logs, checkpoints = {}, {}, {}
    for variant in variants:
        config = variant_config(base_config, variant)
        logger.info("ablation: training %s", variant)
        result = train(splits, network, config, train_config)
        reports[variant] = evaluate(result.checkpoint, splits.test, interval_minutes=interval_minutes)
        logs[variant] = result.epoch_log
        checkpoints[variant] = result.checkpoint
        logger.info("ablation: %s test MAE %.4f", variant, reports[variant].mean_mae)

    table = pd.concat([reports[v].to_frame() for v in variants], ignore_index=True)[ABLATION_COLUMNS]
    return AblationResult(reports=reports, table=table, epoch_logs=logs, checkpoints=checkpoints)


def ablation_pivot(table):
    """
    Long ablation table -> one row per horizon, columns (variant, metric).

    This is the side-by-side layout of the comparison: 4 horizons x
    3 variants x 2 metrics.
    """
    order = list(dict.fromkeys(table["variant"]))
    wide = table.pivot(index="horizon_min", columns="variant", values=["mae", "rmse"])
    wide = wide.swaplevel(0, 1, axis=1)
    columns = [(v, m) for v in order for m in ("mae", "rmse")]
    return wide[columns]
