import logging
from datetime import date, timedelta

import numpy as np
import pytest

from conftest import make_series
from pipeline.folding import (
    STD_FLOOR,
    FlowSeries,
    FoldedSample,
    SplitSpec,
    build_dataset,
    chronological_split,
    fit_normalizer,
    fold_window,
    unfold,
)
from utils.errors import DataError

START = date(2016, 7, 1)


def day(n):
    return START + timedelta(days=n)


def ramp_series(days, t, stations=1):
    """Every value equals its absolute interval index (outflow offset by 0.5)."""
    n = days * t
    return make_series([(np.arange(n), np.arange(n) + 0.5) for _ in range(stations)], t)


def dry_weather(days):
    return {day(d): 0 for d in range(days)}


def empty_range():
    return (day(1000), day(999))


# ---------------------------------------------------------------------------
# fold / unfold
# ---------------------------------------------------------------------------

def test_fold_layout_by_rows():
    series = make_series([(np.arange(9), np.zeros(9))], 3)[0]
    window = fold_window(series, (day(2), 0), periods=2)
    assert window.shape == (2, 2, 3)
    assert np.array_equal(window[0], [[0, 1, 2], [3, 4, 5]])


def test_fold_seven_by_sixty_and_fourteen_by_seventy_three():
    series = ramp_series(15, 73)[0]
    assert fold_window(series, (day(14), 0), 14).size == 14 * 73 * 2
    series = ramp_series(8, 60)[0]
    assert fold_window(series, (day(7), 0), 7)[0].shape == (7, 60)


def test_fold_insufficient_history_reports_earliest_time():
    series = ramp_series(5, 4)[0]
    with pytest.raises(DataError, match="earliest feasible prediction time"):
        fold_window(series, (day(1), 3), periods=2)


def test_unfold_roundtrip_random():
    rng = np.random.default_rng(0)
    inflow, outflow = rng.integers(0, 50, size=(2, 30))
    series = make_series([(inflow, outflow)], 5)[0]
    window = fold_window(series, (day(6), 0), periods=6)
    flat_in, flat_out = unfold(window)
    assert flat_in.tobytes() == series.inflow.tobytes()
    assert flat_out.tobytes() == series.outflow.tobytes()


def test_unfold_constant():
    series = make_series([(np.full(20, 7.0), np.full(20, 7.0))], 4)[0]
    flat_in, _ = unfold(fold_window(series, (day(4), 2), periods=3))
    assert np.all(flat_in == 7.0)


@pytest.mark.parametrize("interval", range(10))
def test_fold_unfold_bijection(interval):
    series = ramp_series(6, 10)[0]
    window = fold_window(series, (day(4), interval), periods=3)
    flat_in, flat_out = unfold(window)
    k = 40 + interval
    assert np.array_equal(flat_in, np.arange(k - 30, k))
    assert np.array_equal(np.stack([flat_in, flat_out]).reshape(2, 3, 10), window)


def test_flow_series_validation():
    with pytest.raises(DataError):
        FlowSeries(0, START, 4, np.arange(6.0), np.arange(6.0))
    with pytest.raises(DataError):
        FlowSeries(0, START, 2, np.array([1.0, -1.0]), np.zeros(2))


# ---------------------------------------------------------------------------
# build_dataset
# ---------------------------------------------------------------------------

def one_day_split(d):
    return SplitSpec(train=(day(d), day(d)), val=empty_range(), test=empty_range())


def test_one_day_without_following_day():
    series = ramp_series(15, 73)
    splits = build_dataset(series, dry_weather(15), one_day_split(14), periods=14, horizons=4)
    assert len(splits.train) == 70


def test_one_day_with_following_day():
    series = ramp_series(16, 73)
    splits = build_dataset(series, dry_weather(16), one_day_split(14), periods=14, horizons=4)
    assert len(splits.train) == 73


def test_excluded_week_removes_seven_days_of_samples():
    t = 5
    series = ramp_series(30, t)
    split = SplitSpec(train=(day(2), day(20)), val=empty_range(), test=empty_range())
    excluded = SplitSpec(train=(day(2), day(20)), val=empty_range(), test=empty_range(),
                         excluded=[day(d) for d in range(8, 15)])
    full = build_dataset(series, dry_weather(30), split, periods=2, horizons=1)
    fewer = build_dataset(series, dry_weather(30), excluded, periods=2, horizons=1)
    assert len(full.train) - len(fewer.train) == 7 * t
    assert not {s.prediction_date for s in fewer.train} & {day(d) for d in range(8, 15)}


def test_empty_split_gives_empty_collection():
    splits = build_dataset(ramp_series(10, 4), dry_weather(10), one_day_split(5), periods=2, horizons=1)
    assert splits.val == [] and splits.test == []


def test_weather_gaps_are_listed():
    weather = dry_weather(10)
    del weather[day(3)]
    del weather[day(7)]
    with pytest.raises(DataError, match="2016-07-04, 2016-07-08"):
        build_dataset(ramp_series(10, 4), weather, one_day_split(5), periods=2, horizons=1)


def test_stations_must_line_up():
    series = ramp_series(10, 4, stations=2)
    series[1] = make_series([(np.arange(36), np.arange(36))], 4)[0]
    with pytest.raises(DataError):
        build_dataset(series, dry_weather(10), one_day_split(5), periods=2, horizons=1)


def test_no_leakage_exhaustive():
    days, t, p, hs = 20, 10, 3, 4
    series = ramp_series(days, t, stations=2)
    split = chronological_split(START, days, 14, 3)
    splits = build_dataset(series, dry_weather(days), split, periods=p, horizons=hs)
    samples = splits.train + splits.val + splits.test
    # feasible k: k >= P*T and k + Hs <= days*T
    assert len(samples) == days * t - hs + 1 - p * t
    for sample in samples:
        k = sample.absolute_index
        assert (sample.prediction_date - START).days * t + sample.interval_index == k
        assert sample.window[:, 0].max() < k
        assert sample.window[:, 0].min() == k - p * t
        assert sample.targets[:, 0].min() >= k
        assert np.array_equal(sample.targets[0, 0], np.arange(k, k + hs))
        assert sample.window_span == (k - p * t, k)
        assert sample.target_span == (k, k + hs)
        assert not sample.window.flags.writeable


def test_rain_flag_is_the_prediction_day():
    weather = dry_weather(10)
    weather[day(6)] = 1
    splits = build_dataset(ramp_series(10, 4), weather, one_day_split(6), periods=2, horizons=1)
    assert {s.rain_flag for s in splits.train} == {1}


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def test_chronological_split_ranges():
    split = chronological_split(START, 90, 70, 7)
    assert split.train == (day(0), day(69))
    assert split.val == (day(70), day(76))
    assert split.test == (day(77), day(89))
    assert len(split.dates("test")) == 13


def test_split_ranges_must_be_ordered():
    with pytest.raises(DataError):
        SplitSpec(train=(day(0), day(10)), val=(day(5), day(12)), test=empty_range())


def test_split_accepts_iso_strings():
    split = SplitSpec(train=("2016-07-01", "2016-07-02"), val=empty_range(), test=empty_range(),
                      excluded=["2016-07-02"])
    assert split.dates("train") == [START]


# ---------------------------------------------------------------------------
# normalizer
# ---------------------------------------------------------------------------

def fake_samples(values):
    """One-station samples whose step-0 target is each value on both channels."""
    return [
        FoldedSample(prediction_date=START, interval_index=i, absolute_index=i, periods=1,
                     window=np.zeros((1, 2, 1, 1)), rain_flag=0,
                     targets=np.full((1, 2, 1), float(v)))
        for i, v in enumerate(values)
    ]


def test_normalizer_hand_example():
    norm = fit_normalizer(fake_samples([0, 10]))
    assert np.array_equal(norm.mean, [[5.0, 5.0]])
    assert np.array_equal(norm.std, [[5.0, 5.0]])


def test_constant_channel_is_floored_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        norm = fit_normalizer(fake_samples([5, 5, 5]))
    assert np.all(norm.std == STD_FLOOR)
    assert "zero variance" in caplog.text
    assert not norm.apply_targets(np.full((1, 2, 3), 5.0)).any()


def test_normalizer_needs_two_samples():
    with pytest.raises(DataError):
        fit_normalizer(fake_samples([1]))


def test_normalizer_roundtrip(tiny_splits):
    norm = fit_normalizer(tiny_splits.train)
    rng = np.random.default_rng(0)
    values = rng.normal(50, 20, size=(4, 2, 2))
    np.testing.assert_allclose(norm.invert_targets(norm.apply_targets(values)), values, rtol=0, atol=1e-9)
    restored = norm.from_dict(norm.to_dict())
    assert np.array_equal(restored.mean, norm.mean) and np.array_equal(restored.std, norm.std)


def test_normalizer_ignores_test_data():
    days, t = 12, 4
    split = chronological_split(START, days, 6, 2)
    base = ramp_series(days, t)
    changed = ramp_series(days, t)
    noisy_in = changed[0].inflow.copy()
    noisy_in[9 * t:] += 1000
    changed[0] = make_series([(noisy_in, changed[0].outflow)], t)[0]
    a = fit_normalizer(build_dataset(base, dry_weather(days), split, 2, 1).train)
    b = fit_normalizer(build_dataset(changed, dry_weather(days), split, 2, 1).train)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)
