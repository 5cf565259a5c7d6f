"""Shared pytest fixtures: a tiny station network, corpus and model config."""

from datetime import date

import numpy as np
import pytest

from model.mpstn import ModelConfig
from pipeline.folding import FlowSeries, build_dataset, chronological_split
from pipeline.synthgen import GenConfig, NetworkSpec, generate_corpus


@pytest.fixture
def line4():
    """Stations 0-1-2-3 in a line."""
    return NetworkSpec(n_stations=4, edges=((0, 1), (1, 2), (2, 3)), kind="line")


@pytest.fixture(scope="session")
def tiny_gen_config():
    # 8 two-hour intervals cover both commuter peaks
    return GenConfig(seed=3, days=20, intervals_per_day=8, n_stations=4, commuters=300,
                     topology="line", interval_minutes=120)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_gen_config):
    return generate_corpus(tiny_gen_config)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(periods=4, intervals_per_day=8, n_stations=4, gnn_layers=1,
                       feature_dim=64, weather_embed_dim=2, horizons=2)


@pytest.fixture(scope="session")
def tiny_splits(tiny_corpus):
    """12 train days, 3 val days, 5 test days; P=4, Hs=2."""
    split = chronological_split(tiny_corpus.config.start_date, 20, 12, 3)
    return build_dataset(tiny_corpus.series, tiny_corpus.weather.as_dict(), split, periods=4, horizons=2)


def make_series(values_by_station, intervals_per_day, start=date(2016, 7, 1)):
    """dict station -> FlowSeries from [S, 2, N] style nested arrays."""
    return {
        station: FlowSeries(
            station_id=station,
            start_date=start,
            intervals_per_day=intervals_per_day,
            inflow=np.asarray(flows[0], dtype=np.float64),
            outflow=np.asarray(flows[1], dtype=np.float64),
        )
        for station, flows in enumerate(values_by_station)
    }


@pytest.fixture
def series_factory():
    return make_series
