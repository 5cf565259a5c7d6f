from dataclasses import replace

import networkx as nx
import numpy as np
import pytest

from pipeline.synthgen import (
    CommuterPopulation,
    GenConfig,
    NetworkSpec,
    WeatherSeries,
    generate_corpus,
    generate_flows,
    generate_network,
    generate_weather,
)
from utils.errors import ConfigError, DataError


def single_population(**overrides):
    fields = dict(
        home=np.array([0]),
        work=np.array([2]),
        am_mean=np.array([172.0]),      # 08:22
        am_sd=np.array([1e-9]),
        pm_mean=np.array([757.0]),      # 18:07
        pm_sd=np.array([1e-9]),
        travel_minutes=np.array([20.0]),
        weekday_activity=np.array([1.0]),
        weekend_activity=np.array([0.0]),
    )
    fields.update(overrides)
    return CommuterPopulation(**fields)


def dry(config):
    return WeatherSeries(start_date=config.start_date, rain=np.zeros(config.days, dtype=np.int64),
                         multiplier=config.rain_multiplier)


def stacked(series, channel):
    return np.stack([getattr(series[s], channel) for s in sorted(series)])


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

def test_line_network():
    assert generate_network("line", 3).edges == ((0, 1), (1, 2))


@pytest.mark.parametrize("kind", ["tree", "two-line-with-interchange"])
def test_tree_like_networks_are_connected(kind):
    network = generate_network(kind, 10, seed=5)
    assert len(network.edges) == 9
    assert nx.is_connected(network.to_graph())


def test_network_is_deterministic():
    assert generate_network("tree", 10, seed=2).edges == generate_network("tree", 10, seed=2).edges


def test_unknown_network_kind():
    with pytest.raises(ConfigError):
        generate_network("ring", 5)


@pytest.mark.parametrize("edges", [((0, 0),), ((0, 1), (1, 0)), ((0, 5),), ((0, 1),)])
def test_invalid_networks_are_rejected(edges):
    with pytest.raises(DataError):
        NetworkSpec(n_stations=3, edges=edges)


def test_adjacency_is_symmetric_and_hops_follow_the_line():
    network = generate_network("line", 4)
    a = network.adjacency()
    assert np.array_equal(a, a.T)
    assert network.hop_distances()[0, 3] == 3


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------

def test_zero_commuters_and_noise_give_zero_flows():
    config = GenConfig(days=5, n_stations=4, commuters=0, noise=0.0)
    corpus = generate_corpus(config)
    assert not stacked(corpus.series, "inflow").any()
    assert not stacked(corpus.series, "outflow").any()


def test_single_commuter_trace():
    config = GenConfig(days=7, n_stations=3, commuters=1, noise=0.0, topology="line")
    network = generate_network("line", 3)
    series, _ = generate_flows(network, single_population(), dry(config), config)
    t = config.intervals_per_day
    inflow, outflow = stacked(series, "inflow"), stacked(series, "outflow")
    for d in range(config.days):
        is_weekday = (config.start_date.weekday() + d) % 7 < 5
        day_in = inflow[:, d * t:(d + 1) * t]
        day_out = outflow[:, d * t:(d + 1) * t]
        if not is_weekday:
            assert not day_in.any() and not day_out.any()
            continue
        assert day_in.sum() == 2 and day_out.sum() == 2
        assert day_in[0, 172 // 15] == 1          # morning entry at home
        assert day_out[2, 192 // 15] == 1         # arrival at work travel-time later
        assert day_in[2, 757 // 15] == 1          # evening entry at work
        assert day_out[0, 777 // 15] == 1         # back home


def test_trip_past_day_end_is_dropped_from_outflow():
    config = GenConfig(days=1, start_date="2016-07-04", n_stations=3, commuters=1, noise=0.0)
    population = single_population(pm_mean=np.array([1090.0]), travel_minutes=np.array([20.0]))
    series, _ = generate_flows(generate_network("line", 3), population, dry(config), config)
    assert stacked(series, "inflow").sum() == 2
    assert stacked(series, "outflow").sum() == 1


def test_inflow_equals_outflow_each_day():
    config = GenConfig(seed=11, days=14, n_stations=10, commuters=500, noise=0.0)
    corpus = generate_corpus(config)
    t = config.intervals_per_day
    daily_in = stacked(corpus.series, "inflow").reshape(10, config.days, t).sum(axis=(0, 2))
    daily_out = stacked(corpus.series, "outflow").reshape(10, config.days, t).sum(axis=(0, 2))
    assert np.array_equal(daily_in, daily_out)
    assert daily_in.min() > 0


def test_generation_is_deterministic():
    config = GenConfig(seed=4, days=6, n_stations=5, commuters=200)
    a, b = generate_corpus(config), generate_corpus(config)
    assert a.network.edges == b.network.edges
    assert np.array_equal(a.weather.rain, b.weather.rain)
    assert np.array_equal(stacked(a.series, "inflow"), stacked(b.series, "inflow"))
    assert np.array_equal(stacked(a.series, "outflow"), stacked(b.series, "outflow"))


def test_noise_is_non_negative_integers():
    corpus = generate_corpus(GenConfig(days=3, n_stations=3, commuters=0, noise=2.0))
    inflow = stacked(corpus.series, "inflow")
    assert inflow.min() >= 0 and inflow.sum() > 0
    assert np.array_equal(inflow, np.round(inflow))


def test_hourly_sums_are_steadier_than_single_intervals():
    config = GenConfig(seed=9, days=60, n_stations=3, commuters=200, noise=0.0, topology="line")
    rng = np.random.default_rng(9)
    k = config.commuters
    population = CommuterPopulation(
        home=np.zeros(k, dtype=np.int64),
        work=np.full(k, 2),
        am_mean=rng.uniform(165, 195, size=k),      # inside 08:00-09:00
        am_sd=rng.uniform(5, 15, size=k),
        pm_mean=np.full(k, 750.0),
        pm_sd=np.full(k, 10.0),
        travel_minutes=np.full(k, 7.0),
        weekday_activity=np.full(k, 0.9),
        weekend_activity=np.full(k, 0.9),
    )
    series, _ = generate_flows(generate_network("line", 3), population, dry(config), config)
    t = config.intervals_per_day
    per_day = series[0].inflow.reshape(config.days, t)[:, 10:14]      # the four intervals of the hour
    cv = lambda x: x.std() / x.mean()
    hourly = cv(per_day.sum(axis=1))
    for column in range(4):
        assert hourly < cv(per_day[:, column])


def test_rain_scales_daily_totals():
    config = GenConfig(seed=5, days=280, n_stations=4, commuters=400, noise=0.0,
                       rain_probability=0.5, rain_multiplier=0.7, topology="line")
    corpus = generate_corpus(config)
    t = config.intervals_per_day
    totals = stacked(corpus.series, "inflow").reshape(4, config.days, t).sum(axis=(0, 2))
    weekday = np.array([d.weekday() < 5 for d in corpus.weather.dates])
    rain = corpus.weather.rain.astype(bool)
    ratio = totals[weekday & rain].mean() / totals[weekday & ~rain].mean()
    assert ratio == pytest.approx(0.7, abs=0.03)


def test_weather_follows_probability():
    weather = generate_weather(GenConfig(seed=1, days=1000, rain_probability=0.3))
    assert set(np.unique(weather.rain)) <= {0, 1}
    assert weather.rain.mean() == pytest.approx(0.3, abs=0.05)
    assert len(weather.as_dict()) == 1000


@pytest.mark.parametrize("field, value", [
    ("rain_multiplier", 0.0), ("rain_probability", 1.5), ("n_stations", 1),
    ("topology", "ring"), ("commuters", -1),
])
def test_invalid_gen_config(field, value):
    with pytest.raises(ConfigError):
        replace(GenConfig(), **{field: value}).validate()
