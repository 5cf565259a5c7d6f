"""
Synthetic Subway Data: stations, commuters, weather and flow counts

=== WHY SYNTHETIC DATA? ===

Real turnstile (AFC) data is proprietary, so every mechanism of the
forecaster is checked on a generated city whose structure is known:

1. A station graph (a line, a random tree, or two lines with an interchange).
2. A commuter population. Each commuter has a home and a work station, a
   preferred morning and evening entry time, and a travel time that grows
   with the number of hops between the two stations.
3. A weather series. On rain days every commuter is less likely to travel
   (activity probability multiplied by rho).
4. Flow counts. Each active commuter taps in at home in the morning (one
   inflow count) and taps out at work travel-time later (one outflow count),
   then mirrors the trip in the evening. Entry times jitter day to day around
   the preferred time, e.g. 8:15 one day and 8:45 the next.

On top of the commuters every (station, interval, channel) gets a small
Poisson count of background riders.

=== TIME AXIS ===

A service day starts at DAY_START_MINUTE (05:30) and has T intervals of
`interval_minutes` (15) each; T = 73 covers 05:30 to 23:45. All commuter times
are minutes since the start of service. A trip whose tap-out would fall
after the last interval is dropped from the outflow (the passenger is
"clipped"), so conservation holds only for days without clipped trips.

=== DETERMINISM ===

Every random draw goes through utils.helpers.make_rng(seed, stream, ...).
Days use their own stream, so any day can be regenerated on its own.
"""

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta

import networkx as nx
import numpy as np

from pipeline.folding import FlowSeries
from utils.errors import ConfigError, DataError
from utils.helpers import make_rng

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# CONFIGURATION
# ---------------------------------------------------------------------------
TOPOLOGIES = ("line", "tree", "two-line-with-interchange")
DAY_START_MINUTE = 5 * 60 + 30

# random streams
_STREAM_NETWORK = 1
_STREAM_POPULATION = 2
_STREAM_WEATHER = 3
_STREAM_DAY = 4

# commuter population shape (minutes since start of service)
AM_PEAK = 8 * 60 + 15 - DAY_START_MINUTE
AM_SPREAD = 35
PM_PEAK = 18 * 60 - DAY_START_MINUTE
PM_SPREAD = 45
ENTRY_SD_RANGE = (5.0, 15.0)
WEEKDAY_ACTIVITY_RANGE = (0.80, 0.98)
WEEKEND_ACTIVITY_RANGE = (0.10, 0.30)


@dataclass(frozen=True)
class GenConfig:
    seed: int = 7
    days: int = 90
    intervals_per_day: int = 73
    n_stations: int = 10
    commuters: int = 2000
    noise: float = 1.0
    rain_probability: float = 0.3
    rain_multiplier: float = 0.8
    topology: str = "tree"
    start_date: date = date(2016, 7, 1)
    interval_minutes: int = 15
    minutes_per_hop: float = 3.0

    def __post_init__(self):
        if isinstance(self.start_date, str):
            try:
                object.__setattr__(self, "start_date", date.fromisoformat(self.start_date))
            except ValueError as e:
                raise ConfigError(f"GenConfig.start_date: {e}") from e

    def validate(self):
        problems = []
        if self.days < 1:
            problems.append("days must be >= 1")
        if self.intervals_per_day < 1:
            problems.append("intervals_per_day must be >= 1")
        if self.n_stations < 2:
            problems.append("n_stations must be >= 2")
        if self.commuters < 0:
            problems.append("commuters must be >= 0")
        if self.noise < 0:
            problems.append("noise must be >= 0")
        if not 0.0 <= self.rain_probability <= 1.0:
            problems.append("rain_probability must be in [0, 1]")
        if not 0.0 < self.rain_multiplier <= 1.0:
            problems.append("rain_multiplier must be in (0, 1]")
        if self.topology not in TOPOLOGIES:
            problems.append(f"topology must be one of {TOPOLOGIES}")
        if self.interval_minutes < 1 or self.minutes_per_hop <= 0:
            problems.append("interval_minutes and minutes_per_hop must be positive")
        if problems:
            raise ConfigError("invalid GenConfig: " + "; ".join(problems))
        return self

    @property
    def day_minutes(self):
        return self.intervals_per_day * self.interval_minutes


# ===========================================================================
# NETWORK
# ===========================================================================

@dataclass(frozen=True)
class NetworkSpec:
    """Stations 0..S-1 and their undirected physical adjacency."""

    n_stations: int
    edges: tuple
    kind: str = "custom"

    def __post_init__(self):
        normalized = []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise DataError(f"self-edge at station {a}")
            if not (0 <= a < self.n_stations and 0 <= b < self.n_stations):
                raise DataError(f"edge ({a}, {b}) outside stations 0..{self.n_stations - 1}")
            normalized.append((min(a, b), max(a, b)))
        if len(set(normalized)) != len(normalized):
            raise DataError("duplicate edges in station network")
        object.__setattr__(self, "edges", tuple(sorted(normalized)))
        if self.n_stations < 1 or not nx.is_connected(self.to_graph()):
            raise DataError(f"station network with {self.n_stations} stations is not connected")

    def to_graph(self):
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_stations))
        graph.add_edges_from(self.edges)
        return graph

    def adjacency(self):
        """Dense 0/1 adjacency matrix A (no self loops)."""
        return nx.to_numpy_array(self.to_graph(), nodelist=range(self.n_stations), dtype=np.float64)

    def hop_distances(self):
        lengths = dict(nx.all_pairs_shortest_path_length(self.to_graph()))
        return np.array([[lengths[i][j] for j in range(self.n_stations)] for i in range(self.n_stations)])

    def to_dict(self):
        return {"n_stations": self.n_stations, "edges": [list(e) for e in self.edges], "kind": self.kind}

    @classmethod
    def from_dict(cls, data):
        return cls(n_stations=data["n_stations"], edges=tuple(tuple(e) for e in data["edges"]),
                   kind=data.get("kind", "custom"))


def generate_network(kind, n_stations, seed=0):
    """
    A connected station graph.

        line                        0-1-2-...-(S-1)
        tree                        station i joins a random earlier station
        two-line-with-interchange   line A = first half; line B runs through
                                    the middle station of line A
    """
    if kind not in TOPOLOGIES:
        raise ConfigError(f"unknown network kind {kind!r}; expected one of {TOPOLOGIES}")
    if n_stations < 2:
        raise ConfigError(f"a network needs at least 2 stations, got {n_stations}")

    if kind == "line":
        edges = list(nx.path_graph(n_stations).edges())
    elif kind == "tree":
        rng = make_rng(seed, _STREAM_NETWORK)
        edges = [(int(rng.integers(0, i)), i) for i in range(1, n_stations)]
    else:
        line_a = list(range((n_stations + 1) // 2))
        interchange = line_a[len(line_a) // 2]
        line_b = list(range(len(line_a), n_stations))
        half = len(line_b) // 2
        route_b = line_b[:half] + [interchange] + line_b[half:]
        edges = list(nx.path_graph(line_a).edges()) + list(nx.path_graph(route_b).edges())

    return NetworkSpec(n_stations=n_stations, edges=tuple(edges), kind=kind)


# ===========================================================================
# COMMUTERS & WEATHER
# ===========================================================================

@dataclass(frozen=True, eq=False)
class CommuterPopulation:
    """One entry per commuter in each array. Times are minutes since service start."""

    home: np.ndarray
    work: np.ndarray
    am_mean: np.ndarray
    am_sd: np.ndarray
    pm_mean: np.ndarray
    pm_sd: np.ndarray
    travel_minutes: np.ndarray
    weekday_activity: np.ndarray
    weekend_activity: np.ndarray

    def __len__(self):
        return len(self.home)

    def validate(self, day_minutes):
        for name in ("am_mean", "pm_mean"):
            values = getattr(self, name)
            if ((values < 0) | (values >= day_minutes)).any():
                raise ConfigError(f"commuter {name} outside the service day [0, {day_minutes})")
        if (self.am_sd <= 0).any() or (self.pm_sd <= 0).any():
            raise ConfigError("commuter entry-time sd must be > 0")
        if (self.travel_minutes <= 0).any():
            raise ConfigError("commuter travel time must be > 0")
        return self


def generate_population(network, config):
    """Commuters with home != work, peak-centred entry times and OD travel lags."""
    rng = make_rng(config.seed, _STREAM_POPULATION)
    k = config.commuters
    s = network.n_stations
    home = rng.integers(0, s, size=k)
    # work station: any station other than home
    work = (home + rng.integers(1, s, size=k)) % s
    hops = network.hop_distances()[home, work] if k else np.zeros(0)
    last = config.day_minutes - 1
    population = CommuterPopulation(
        home=home,
        work=work,
        am_mean=np.clip(rng.normal(AM_PEAK, AM_SPREAD, size=k), 0, last),
        am_sd=rng.uniform(*ENTRY_SD_RANGE, size=k),
        pm_mean=np.clip(rng.normal(PM_PEAK, PM_SPREAD, size=k), 0, last),
        pm_sd=rng.uniform(*ENTRY_SD_RANGE, size=k),
        travel_minutes=hops * config.minutes_per_hop + rng.uniform(0, config.minutes_per_hop, size=k),
        weekday_activity=rng.uniform(*WEEKDAY_ACTIVITY_RANGE, size=k),
        weekend_activity=rng.uniform(*WEEKEND_ACTIVITY_RANGE, size=k),
    )
    return population.validate(config.day_minutes)


@dataclass(frozen=True, eq=False)
class WeatherSeries:
    start_date: date
    rain: np.ndarray          # 0/1 per day
    multiplier: float         # activity multiplier on rain days

    @property
    def dates(self):
        return [self.start_date + timedelta(days=d) for d in range(len(self.rain))]

    def as_dict(self):
        return {d: int(r) for d, r in zip(self.dates, self.rain)}


def generate_weather(config):
    rng = make_rng(config.seed, _STREAM_WEATHER)
    rain = (rng.random(config.days) < config.rain_probability).astype(np.int64)
    return WeatherSeries(start_date=config.start_date, rain=rain, multiplier=config.rain_multiplier)


# ===========================================================================
# FLOWS
# ===========================================================================

def _truncated_normal(rng, mean, sd, low, high, redraws=20):
    """Normal draws kept inside [low, high); stragglers are redrawn, then clipped."""
    x = rng.normal(mean, sd)
    for _ in range(redraws):
        bad = (x < low) | (x >= high)
        if not bad.any():
            break
        x[bad] = rng.normal(mean[bad], sd[bad])
    return np.clip(x, low, np.nextafter(high, low))


def _day_flows(day, is_weekday, rain, population, network, config):
    """Inflow and outflow matrices [S, T] for one day."""
    rng = make_rng(config.seed, _STREAM_DAY, day)
    s, t = network.n_stations, config.intervals_per_day
    inflow = np.zeros((s, t), dtype=np.int64)
    outflow = np.zeros((s, t), dtype=np.int64)

    activity = population.weekday_activity if is_weekday else population.weekend_activity
    if rain:
        activity = activity * config.rain_multiplier
    active = rng.random(len(population)) < activity

    trips = (
        (population.am_mean, population.am_sd, population.home, population.work),
        (population.pm_mean, population.pm_sd, population.work, population.home),
    )
    for mean, sd, origin, destination in trips:
        entry = _truncated_normal(rng, mean, sd, 0.0, float(config.day_minutes))
        exit_ = entry + population.travel_minutes
        completed = active & (exit_ < config.day_minutes)
        entry_interval = (entry // config.interval_minutes).astype(np.int64)
        exit_interval = (np.minimum(exit_, config.day_minutes - 1) // config.interval_minutes).astype(np.int64)
        np.add.at(inflow, (origin[active], entry_interval[active]), 1)
        np.add.at(outflow, (destination[completed], exit_interval[completed]), 1)

    if config.noise > 0:
        inflow += rng.poisson(config.noise, size=(s, t))
        outflow += rng.poisson(config.noise, size=(s, t))
    return inflow, outflow


def generate_flows(network, population, weather, config):
    """
    Flow series for every station, plus the weather that shaped them.

    Returns (dict station_id -> FlowSeries, WeatherSeries).
    """
    config.validate()
    if len(weather.rain) < config.days:
        raise DataError(f"weather covers {len(weather.rain)} days, config needs {config.days}")
    s, t = network.n_stations, config.intervals_per_day
    inflow = np.zeros((s, config.days * t), dtype=np.int64)
    outflow = np.zeros_like(inflow)

    for day in range(config.days):
        current = config.start_date + timedelta(days=day)
        day_in, day_out = _day_flows(day, current.weekday() < 5, bool(weather.rain[day]),
                                     population, network, config)
        inflow[:, day * t:(day + 1) * t] = day_in
        outflow[:, day * t:(day + 1) * t] = day_out

    series = {
        station: FlowSeries(
            station_id=station,
            start_date=config.start_date,
            intervals_per_day=t,
            inflow=inflow[station],
            outflow=outflow[station],
        )
        for station in range(s)
    }
    logger.info("generated %d days x %d stations (%d commuters, %d rain days)",
                config.days, s, len(population), int(weather.rain[:config.days].sum()))
    return series, weather


@dataclass(frozen=True, eq=False)
class SyntheticCorpus:
    config: GenConfig
    network: NetworkSpec
    population: CommuterPopulation
    weather: WeatherSeries
    series: dict = field(default_factory=dict)


def generate_corpus(config):
    """Network, population, weather and flows from one GenConfig."""
    config.validate()
    network = generate_network(config.topology, config.n_stations, config.seed)
    population = generate_population(network, config)
    weather = generate_weather(config)
    series, weather = generate_flows(network, population, weather, config)
    return SyntheticCorpus(config=config, network=network, population=population,
                           weather=weather, series=series)
