"""
Error metrics.

    MAE  = mean |pred - actual|
    RMSE = sqrt(mean (pred - actual)^2)

An EvalReport holds both metrics for every forecast horizon (15, 30, 45 and
60 minutes ahead at 15-minute intervals), computed over all stations, both
channels and all samples, in persons per interval.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from utils.errors import DataError, ShapeError

DEFAULT_INTERVAL_MINUTES = 15


def _pair(pred, actual):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    actual = np.asarray(actual, dtype=np.float64).reshape(-1)
    if pred.size == 0 or actual.size == 0:
        raise DataError("metrics need at least one value")
    if pred.shape != actual.shape:
        raise ShapeError(f"metrics: pred has {pred.size} values, actual has {actual.size}")
    return pred, actual


def mae(pred, actual):
    pred, actual = _pair(pred, actual)
    return float(np.mean(np.abs(pred - actual)))


def rmse(pred, actual):
    pred, actual = _pair(pred, actual)
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


@dataclass(frozen=True)
class EvalReport:
    horizons_min: tuple
    mae: tuple
    rmse: tuple
    variant: str = "full"

    @classmethod
    def from_arrays(cls, pred, actual, variant="full", interval_minutes=DEFAULT_INTERVAL_MINUTES):
        """pred / actual: [N, S, 2, Hs] in persons per interval."""
        pred = np.asarray(pred, dtype=np.float64)
        actual = np.asarray(actual, dtype=np.float64)
        if pred.shape != actual.shape or pred.ndim != 4:
            raise ShapeError(f"EvalReport needs matching [N,S,2,Hs] arrays, got {pred.shape} and {actual.shape}")
        horizons = pred.shape[-1]
        return cls(
            horizons_min=tuple(interval_minutes * (h + 1) for h in range(horizons)),
            mae=tuple(mae(pred[..., h], actual[..., h]) for h in range(horizons)),
            rmse=tuple(rmse(pred[..., h], actual[..., h]) for h in range(horizons)),
            variant=variant,
        )

    @property
    def mean_mae(self):
        return float(np.mean(self.mae))

    def to_frame(self):
        return pd.DataFrame({
            "horizon_min": list(self.horizons_min),
            "mae": list(self.mae),
            "rmse": list(self.rmse),
            "variant": self.variant,
        })

    @classmethod
    def from_frame(cls, df):
        variants = df["variant"].unique()
        if len(variants) != 1:
            raise DataError(f"EvalReport frame holds {len(variants)} variants, expected 1")
        return cls(
            horizons_min=tuple(int(h) for h in df["horizon_min"]),
            mae=tuple(float(v) for v in df["mae"]),
            rmse=tuple(float(v) for v in df["rmse"]),
            variant=str(variants[0]),
        )
