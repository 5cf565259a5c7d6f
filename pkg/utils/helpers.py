"""
Shared helper functions: configuration files, logging, hashing and seeds.

Configuration
-------------
Every config in the project is a frozen dataclass with defaults. JSON files
only need the keys you want to change; any key the dataclass does not know is
an error (a typo like "epoch" instead of "epochs" would otherwise be silently
ignored halfway through a grid search).

Seeds
-----
All randomness goes through numpy Generators built from a root seed plus a
"stream" tag, e.g. np.random.default_rng([seed, STREAM, day]). Two streams with
different tags never share random numbers, so changing how many parameters a
model has cannot change the shuffle order of the training data.
"""

import dataclasses
import hashlib
import json
import logging
import os
from datetime import date
from pathlib import Path

import numpy as np

from utils.errors import ConfigError

# ---------------------------------------------------------------------------
# CONFIGURATION
# ---------------------------------------------------------------------------
TOOL_VERSION = "1.0.0"
LOG_LEVEL_ENV = "MPSTN_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level=None):
    """
    Configures the root logger once.

    The level comes from the argument, else from $MPSTN_LOG_LEVEL, else INFO.
    """
    level_name = (level or os.environ.get(LOG_LEVEL_ENV) or "INFO").upper()
    numeric = logging.getLevelName(level_name)
    if not isinstance(numeric, int):
        raise ConfigError(f"unknown log level {level_name!r} in ${LOG_LEVEL_ENV}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    logging.getLogger().setLevel(numeric)


# ===========================================================================
# CONFIG DATACLASSES <-> JSON
# ===========================================================================

def config_from_dict(cls, data):
    """
    Builds a config dataclass from a plain dict.

    Unknown keys raise ConfigError. Lists are turned into tuples so the result
    stays hashable; dataclasses that hold dates convert ISO strings themselves.
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} config must be a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")

    values = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in data.items()
    }
    try:
        config = cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{cls.__name__}: {e}") from e
    if hasattr(config, "validate"):
        config.validate()
    return config


def config_to_dict(config):
    """Turns a config dataclass into JSON-ready data (dates as ISO strings)."""
    return _jsonable(dataclasses.asdict(config))


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, np.generic):
        return value.item()
    return value


def load_config(path, cls):
    """
    Reads a JSON config file into `cls`. A None path gives the defaults.
    """
    if path is None:
        return config_from_dict(cls, {})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(cls, data)


# ===========================================================================
# HASHING & SEEDS
# ===========================================================================

def file_sha256(path):
    """Hex SHA-256 of a file's bytes, read in chunks."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_rng(seed, *stream):
    """A numpy Generator for (seed, stream...); see the module docstring."""
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


def derive_seed(seed, *stream):
    """A plain int seed derived from (seed, stream...), for child runs."""
    return int(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]).generate_state(1)[0])
