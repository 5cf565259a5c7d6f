"""
Reference predictors the network has to beat.

historical_average
    For each (station, channel, time of day) the mean flow seen at that time
    of day across the training split.

seasonal_naive
    The value observed exactly one day (T intervals) before each target. It
    needs no fitting; the value is always the last row of the folded window.

Both return [S, 2*Hs] arrays in persons per interval, laid out like the
network output (column c*Hs + h).
"""

from dataclasses import dataclass

import numpy as np

from utils.errors import ConfigError, DataError

BASELINE_KINDS = ("historical_average", "seasonal_naive")


@dataclass(frozen=True, eq=False)
class BaselinePredictor:
    kind: str
    intervals_per_day: int
    interval_means: np.ndarray = None     # [S, 2, T] for historical_average


def fit_baseline(kind, train_samples):
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
    if not train_samples:
        raise DataError("fit_baseline needs training samples")
    t = train_samples[0].window.shape[-1]
    if kind == "seasonal_naive":
        return BaselinePredictor(kind=kind, intervals_per_day=t)

    s = train_samples[0].window.shape[0]
    totals = np.zeros((s, 2, t))
    counts = np.zeros(t, dtype=np.int64)
    for sample in train_samples:
        totals[:, :, sample.interval_index] += sample.targets[:, :, 0]
        counts[sample.interval_index] += 1
    uncovered = np.flatnonzero(counts == 0)
    if uncovered.size:
        raise DataError(f"historical_average: training data never covers intervals {uncovered.tolist()}")
    return BaselinePredictor(kind=kind, intervals_per_day=t, interval_means=totals / counts)


def predict_baseline(predictor, sample):
    s, _, periods, t = sample.window.shape
    horizons = sample.targets.shape[-1]
    if t != predictor.intervals_per_day:
        raise DataError(f"baseline fitted for T={predictor.intervals_per_day}, sample has T={t}")
    if predictor.kind == "seasonal_naive":
        if horizons > t:
            raise DataError(f"seasonal_naive needs Hs <= T, got Hs={horizons}, T={t}")
        # target k+h minus one day is window position (P-1)*T + h
        values = sample.window[:, :, periods - 1, :horizons]
    else:
        if predictor.interval_means.shape[0] != s:
            raise DataError(f"baseline fitted for {predictor.interval_means.shape[0]} stations, sample has {s}")
        times = (sample.interval_index + np.arange(horizons)) % t
        values = predictor.interval_means[:, :, times]
    return np.asarray(values, dtype=np.float64).reshape(s, 2 * horizons)
