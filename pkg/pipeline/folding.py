"""
Period Folding: turning flow histories into training samples

=== WHAT IS FOLDING? ===

A station's inflow is one long series, one count per interval:

    day 1: a b c | day 2: d e f | day 3: ...        (T = 3 intervals per day)

To predict the interval right after "f" with P = 2 days of history we take
the trailing P*T values and stack them as a P x T matrix:

    row 0:  a b c
    row 1:  d e f        <- ends immediately before the prediction time

Reading along a ROW gives neighbouring intervals of the same day (the
intra-period view); reading down a COLUMN gives the same time offset on
consecutive days (the inter-period view). A 2-D convolution sees both at once.

Rows are trailing day-length chunks ending at the prediction time, not
midnight-aligned calendar days, so column t always means "t intervals after
the same moment P-1-row days earlier".

=== WHAT A SAMPLE HOLDS ===

    window   [S, 2, P, T]   inflow / outflow history of every station
    targets  [S, 2, Hs]     the Hs intervals starting AT the prediction time
    rain     0/1            weather on the prediction day

Samples carry raw counts. Normalization happens when a batch is assembled.
"""

import logging
from dataclasses import dataclass, field, replace
from datetime import date, timedelta

import numpy as np

from utils.errors import DataError, ShapeError

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# CONFIGURATION
# ---------------------------------------------------------------------------
CHANNELS = ("inflow", "outflow")
STD_FLOOR = 1e-6


# ===========================================================================
# FLOW SERIES
# ===========================================================================

@dataclass(frozen=True, eq=False)
class FlowSeries:
    """Inflow / outflow counts of one station, day after day, T per day."""

    station_id: object
    start_date: date
    intervals_per_day: int
    inflow: np.ndarray
    outflow: np.ndarray

    def __post_init__(self):
        inflow = np.asarray(self.inflow, dtype=np.float64)
        outflow = np.asarray(self.outflow, dtype=np.float64)
        t = self.intervals_per_day
        if t < 1:
            raise DataError(f"station {self.station_id}: intervals_per_day must be >= 1")
        if inflow.ndim != 1 or inflow.shape != outflow.shape:
            raise DataError(
                f"station {self.station_id}: inflow length {inflow.shape} != outflow length {outflow.shape}"
            )
        if inflow.size % t:
            raise DataError(f"station {self.station_id}: length {inflow.size} is not a multiple of T={t}")
        if (inflow < 0).any() or (outflow < 0).any():
            raise DataError(f"station {self.station_id}: negative counts")
        object.__setattr__(self, "inflow", inflow)
        object.__setattr__(self, "outflow", outflow)

    @property
    def days(self):
        return self.inflow.size // self.intervals_per_day

    @property
    def dates(self):
        return [self.start_date + timedelta(days=d) for d in range(self.days)]

    def index_of(self, prediction_time):
        """Absolute interval index of (date, interval_index)."""
        day, interval = prediction_time
        if not 0 <= interval < self.intervals_per_day:
            raise DataError(f"interval index {interval} outside 0..{self.intervals_per_day - 1}")
        return (day - self.start_date).days * self.intervals_per_day + interval

    def time_of(self, index):
        """Inverse of index_of."""
        day, interval = divmod(index, self.intervals_per_day)
        return self.start_date + timedelta(days=day), interval


def fold_window(series, prediction_time, periods):
    """
    The trailing P*T intervals before `prediction_time` as a [2, P, T] array.

    Row p, column t is the value at offset p*T + t from the window start.
    """
    t = series.intervals_per_day
    k = series.index_of(prediction_time)
    start = k - periods * t
    if start < 0 or k > series.inflow.size:
        earliest = series.time_of(periods * t)
        raise DataError(
            f"station {series.station_id}: need {periods * t} intervals before {prediction_time}; "
            f"earliest feasible prediction time is {earliest}"
        )
    flows = np.stack([series.inflow[start:k], series.outflow[start:k]])
    return flows.reshape(2, periods, t)


def unfold(window):
    """Inverse of fold_window's layout: two flat sequences of length P*T."""
    window = np.asarray(window)
    if window.ndim != 3 or window.shape[0] != 2:
        raise ShapeError(f"unfold expects a [2, P, T] window, got {window.shape}")
    return window[0].reshape(-1), window[1].reshape(-1)


# ===========================================================================
# SPLITS
# ===========================================================================

def _as_date(value):
    return date.fromisoformat(value) if isinstance(value, str) else value


@dataclass(frozen=True)
class SplitSpec:
    """
    Inclusive (start, end) date ranges. A range with end < start is empty.

    Excluded dates never become prediction dates in any split.
    """

    train: tuple
    val: tuple
    test: tuple
    excluded: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for name in ("train", "val", "test"):
            start, end = getattr(self, name)
            object.__setattr__(self, name, (_as_date(start), _as_date(end)))
        object.__setattr__(self, "excluded", frozenset(_as_date(d) for d in self.excluded))
        ranges = [(n, r) for n, r in self.ranges() if r[0] <= r[1]]
        for (name_a, (_, end_a)), (name_b, (start_b, _)) in zip(ranges, ranges[1:]):
            if not end_a < start_b:
                raise DataError(f"split ranges must be disjoint and ordered: {name_a} ends {end_a}, "
                                f"{name_b} starts {start_b}")

    def ranges(self):
        return [("train", self.train), ("val", self.val), ("test", self.test)]

    def dates(self, name):
        start, end = getattr(self, name)
        days = (end - start).days + 1
        return [start + timedelta(days=d) for d in range(max(days, 0))
                if start + timedelta(days=d) not in self.excluded]


def chronological_split(start_date, days, train_days, val_days, excluded=()):
    """
    First `train_days` calendar days for training, the next `val_days` for
    validation, everything after that for testing.
    """
    start_date = _as_date(start_date)
    if train_days < 1 or val_days < 0 or train_days + val_days > days:
        raise DataError(f"cannot split {days} days into {train_days} train / {val_days} val days")
    day = lambda n: start_date + timedelta(days=n)
    return SplitSpec(
        train=(day(0), day(train_days - 1)),
        val=(day(train_days), day(train_days + val_days - 1)),
        test=(day(train_days + val_days), day(days - 1)),
        excluded=frozenset(_as_date(d) for d in excluded),
    )


# ===========================================================================
# SAMPLES
# ===========================================================================

@dataclass(frozen=True, eq=False)
class FoldedSample:
    """One prediction time with the history of all stations."""

    prediction_date: date
    interval_index: int
    absolute_index: int
    periods: int
    window: np.ndarray      # [S, 2, P, T], read-only
    rain_flag: int
    targets: np.ndarray     # [S, 2, Hs], read-only

    @property
    def prediction_time(self):
        return self.prediction_date, self.interval_index

    @property
    def window_span(self):
        """Absolute interval indices [start, stop) covered by the window."""
        t = self.window.shape[-1]
        return self.absolute_index - self.periods * t, self.absolute_index

    @property
    def target_span(self):
        return self.absolute_index, self.absolute_index + self.targets.shape[-1]


@dataclass(frozen=True)
class SampleSplits:
    train: list
    val: list
    test: list
    station_ids: tuple = ()
    intervals_per_day: int = 0

    def __getitem__(self, name):
        return getattr(self, name)


def stack_stations(series):
    """
    Validates that all stations line up and stacks them as [S, 2, N].

    Returns (station_ids, start_date, T, matrix); the matrix is read-only.
    """
    if not series:
        raise DataError("no station flow series given")
    station_ids = tuple(sorted(series))
    first = series[station_ids[0]]
    for sid in station_ids:
        s = series[sid]
        if (s.intervals_per_day, s.start_date, s.inflow.size) != (
            first.intervals_per_day, first.start_date, first.inflow.size
        ):
            raise DataError(f"station {sid} does not share T / start date / length with station {station_ids[0]}")
    matrix = np.stack([np.stack([series[sid].inflow, series[sid].outflow]) for sid in station_ids])
    matrix.setflags(write=False)
    return station_ids, first.start_date, first.intervals_per_day, matrix


def build_dataset(series, weather, split, periods, horizons):
    """
    Enumerates every feasible (date, interval) of every split as a FoldedSample.

    A prediction time is feasible when P*T intervals of history exist before
    it and Hs intervals (including itself) exist from it on. `weather` maps
    date -> 0/1 and must cover every recorded date.
    """
    station_ids, start_date, t, matrix = stack_stations(series)
    n = matrix.shape[-1]
    dates = [start_date + timedelta(days=d) for d in range(n // t)]

    missing = [d.isoformat() for d in dates if d not in weather]
    if missing:
        raise DataError(f"weather missing for dates: {', '.join(missing)}")

    splits = {}
    for name, _ in split.ranges():
        samples = []
        for day in split.dates(name):
            offset = (day - start_date).days
            if not 0 <= offset < len(dates):
                continue
            rain = int(weather[day])
            for interval in range(t):
                k = offset * t + interval
                if k < periods * t or k + horizons > n:
                    continue
                window = matrix[:, :, k - periods * t:k].reshape(len(station_ids), 2, periods, t)
                samples.append(FoldedSample(
                    prediction_date=day,
                    interval_index=interval,
                    absolute_index=k,
                    periods=periods,
                    window=window,
                    rain_flag=rain,
                    targets=matrix[:, :, k:k + horizons],
                ))
        splits[name] = samples
        logger.debug("split %s: %d samples", name, len(samples))

    return SampleSplits(station_ids=station_ids, intervals_per_day=t, **splits)


# ===========================================================================
# NORMALIZER
# ===========================================================================

@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-station, per-channel z-score. mean / std are [S, 2] arrays."""

    mean: np.ndarray
    std: np.ndarray

    def _stats(self, trailing):
        shape = self.mean.shape + (1,) * trailing
        return self.mean.reshape(shape), self.std.reshape(shape)

    def apply_window(self, window):
        mean, std = self._stats(2)
        return (np.asarray(window) - mean) / std

    def apply_targets(self, targets):
        mean, std = self._stats(1)
        return (np.asarray(targets) - mean) / std

    def invert_targets(self, values):
        mean, std = self._stats(1)
        return np.asarray(values) * std + mean

    def apply_sample(self, sample):
        """A copy of `sample` with normalized window and targets."""
        return replace(sample, window=self.apply_window(sample.window),
                       targets=self.apply_targets(sample.targets))

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(mean=np.asarray(data["mean"], dtype=np.float64),
                   std=np.asarray(data["std"], dtype=np.float64))


def fit_normalizer(train_samples, station_ids=None):
    """
    Mean / population std of the flow at each training prediction time.

    Each training sample contributes the observed value at its own
    prediction time (targets step 0), so every training interval counts once.
    A std below STD_FLOOR is floored with a warning.
    """
    if len(train_samples) < 2:
        raise DataError(f"fit_normalizer needs at least 2 training samples, got {len(train_samples)}")
    values = np.stack([s.targets[:, :, 0] for s in train_samples])   # [N, S, 2]
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    low = std < STD_FLOOR
    for s_idx, c_idx in zip(*np.nonzero(low)):
        station = station_ids[s_idx] if station_ids is not None else s_idx
        logger.warning("station %s %s has zero variance on the training split; std floored to %g",
                       station, CHANNELS[c_idx], STD_FLOOR)
    std = np.where(low, STD_FLOOR, std)
    return Normalizer(mean=mean, std=std)
