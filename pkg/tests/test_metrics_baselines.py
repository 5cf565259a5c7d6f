import math
from datetime import date, timedelta

import numpy as np
import pytest

from conftest import make_series
from pipeline.folding import Normalizer, build_dataset, chronological_split
from training.baselines import fit_baseline, predict_baseline
from training.metrics import EvalReport, mae, rmse
from utils.errors import ConfigError, DataError, ShapeError

START = date(2016, 7, 1)


def dry_weather(days):
    return {START + timedelta(days=d): 0 for d in range(days)}


def splits_of(flows, t, days, train_days, val_days, periods=2, horizons=4):
    """flows: [S, 2, days*T]."""
    series = make_series(flows, t)
    split = chronological_split(START, days, train_days, val_days)
    return build_dataset(series, dry_weather(days), split, periods=periods, horizons=horizons)


def baseline_mae(kind, splits):
    predictor = fit_baseline(kind, splits.train)
    pred = np.stack([predict_baseline(predictor, s) for s in splits.test])
    actual = np.stack([s.targets.reshape(s.targets.shape[0], -1) for s in splits.test])
    return mae(pred, actual)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_hand_example():
    assert mae([1, 3], [2, 5]) == pytest.approx(1.5, abs=1e-12)
    assert rmse([1, 3], [2, 5]) == pytest.approx(math.sqrt(2.5), abs=1e-12)


def test_constant_error():
    assert mae(np.zeros(7), np.full(7, 2.0)) == 2.0
    assert rmse(np.zeros(7), np.full(7, 2.0)) == 2.0


def test_rmse_is_at_least_mae():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = rng.integers(1, 20)
        pred, actual = rng.normal(size=n), rng.normal(size=n)
        assert rmse(pred, actual) >= mae(pred, actual) - 1e-12


def test_empty_input_is_rejected():
    with pytest.raises(DataError):
        mae([], [])
    with pytest.raises(DataError):
        rmse([], [])


def test_length_mismatch_is_rejected():
    with pytest.raises(ShapeError):
        mae([1.0, 2.0], [1.0])


def test_report_per_horizon():
    pred = np.zeros((3, 2, 2, 4))
    actual = np.zeros((3, 2, 2, 4))
    actual[..., 1] = 2.0
    report = EvalReport.from_arrays(pred, actual, variant="full")
    assert report.horizons_min == (15, 30, 45, 60)
    assert report.mae == (0.0, 2.0, 0.0, 0.0)
    assert report.mean_mae == 0.5
    frame = report.to_frame()
    assert len(frame) == 4
    assert EvalReport.from_frame(frame) == report


def test_report_interval_minutes():
    report = EvalReport.from_arrays(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)), interval_minutes=120)
    assert report.horizons_min == (120, 240)


def test_denormalized_mae_scales_per_station():
    rng = np.random.default_rng(1)
    norm = Normalizer(mean=rng.normal(50, 10, size=(3, 2)), std=rng.uniform(1, 20, size=(3, 2)))
    pred_n, actual_n = rng.normal(size=(2, 40, 3, 2, 4))
    pred, actual = norm.invert_targets(pred_n), norm.invert_targets(actual_n)
    for s in range(3):
        for c in range(2):
            direct = mae(pred[:, s, c], actual[:, s, c])
            scaled = norm.std[s, c] * mae(pred_n[:, s, c], actual_n[:, s, c])
            assert direct == pytest.approx(scaled, rel=1e-12)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def periodic_flows(days, t, stations=2):
    profile = np.arange(t, dtype=np.float64) * 3 + 10
    return [(np.tile(profile + s, days), np.tile(profile * 2 + s, days)) for s in range(stations)]


@pytest.mark.parametrize("kind", ["historical_average", "seasonal_naive"])
def test_periodic_data_is_predicted_exactly(kind):
    splits = splits_of(periodic_flows(20, 6), 6, 20, 12, 3)
    assert baseline_mae(kind, splits) == 0.0


def test_seasonal_naive_reads_one_day_back():
    t = 5
    n = 10 * t
    flows = [(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64) * 2)]
    splits = splits_of(flows, t, 10, 6, 2, periods=2, horizons=3)
    predictor = fit_baseline("seasonal_naive", splits.train)
    for sample in splits.test:
        k = sample.absolute_index
        expected = np.concatenate([np.arange(k - t, k - t + 3), 2 * np.arange(k - t, k - t + 3)])
        assert np.array_equal(predict_baseline(predictor, sample)[0], expected)


def test_historical_average_beats_seasonal_naive_on_noise():
    rng = np.random.default_rng(2)
    days, t = 100, 24
    flows = [tuple(50 + rng.normal(0, 5, size=days * t) for _ in range(2)) for _ in range(2)]
    splits = splits_of(flows, t, days, 50, 5)
    assert len(splits.test) >= 1000
    assert baseline_mae("historical_average", splits) <= baseline_mae("seasonal_naive", splits)


def test_historical_average_needs_every_interval():
    splits = splits_of(periodic_flows(10, 4), 4, 10, 6, 2)
    partial = [s for s in splits.train if s.interval_index != 3]
    with pytest.raises(DataError, match=r"\[3\]"):
        fit_baseline("historical_average", partial)


def test_unknown_baseline():
    splits = splits_of(periodic_flows(10, 4), 4, 10, 6, 2)
    with pytest.raises(ConfigError):
        fit_baseline("persistence", splits.train)
