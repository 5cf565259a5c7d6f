"""
Storage Module: every file the forecaster reads or writes

All persistent data lives in plain files inside a data directory or a run
directory. This module is the only place that knows their layout; other
parts of the project call these helpers and get back pandas DataFrames or
the project's own types.

Data directory (written by `cli.py gen`, read by every other command):

    flows.csv      station_id,date,interval_index,inflow,outflow
    weather.csv    date,rain                  (rain is 0 or 1)
    edges.csv      station_a,station_b        (undirected, each pair once)
    manifest.json

Run directory (written by train / eval / grid / ablate / report):

    manifest.json (train / grid / ablate), eval_manifest.json, report_manifest.json,
    checkpoint.mpstn, epoch_log.csv, eval_report.csv, baseline_report.csv,
    grid_results.csv, ablation_report.csv, report.md, predictions/*.csv

CSV conventions: header row mandatory, UTF-8, LF line endings, no index
column. Files are written to a temporary name and renamed into place, so a
crash never leaves half a file behind.
"""

import json
import os
import tempfile
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from pipeline.folding import FlowSeries
from pipeline.synthgen import NetworkSpec
from utils.errors import DataError

# ---------------------------------------------------------------------------
# CONFIGURATION: file names and CSV headers
# ---------------------------------------------------------------------------
FLOWS_FILE = "flows.csv"
WEATHER_FILE = "weather.csv"
EDGES_FILE = "edges.csv"
MANIFEST_FILE = "manifest.json"
EVAL_MANIFEST_FILE = "eval_manifest.json"
REPORT_MANIFEST_FILE = "report_manifest.json"
CHECKPOINT_FILE = "checkpoint.mpstn"
EPOCH_LOG_FILE = "epoch_log.csv"
EVAL_REPORT_FILE = "eval_report.csv"
BASELINE_REPORT_FILE = "baseline_report.csv"
GRID_RESULTS_FILE = "grid_results.csv"
ABLATION_FILE = "ablation_report.csv"
REPORT_FILE = "report.md"
PREDICTIONS_DIR = "predictions"

FLOWS_COLUMNS = ["station_id", "date", "interval_index", "inflow", "outflow"]
WEATHER_COLUMNS = ["date", "rain"]
EDGES_COLUMNS = ["station_a", "station_b"]
EPOCH_LOG_COLUMNS = ["epoch", "lr", "train_l1", "val_mae"]
EVAL_REPORT_COLUMNS = ["horizon_min", "mae", "rmse", "variant"]

RUN_MANIFESTS = (MANIFEST_FILE, EVAL_MANIFEST_FILE, REPORT_MANIFEST_FILE)


# ===========================================================================
# ATOMIC WRITES
# ===========================================================================

def atomic_write_bytes(path, payload):
    """Writes `payload` to a temp file next to `path`, then renames it over."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_frame(df, path):
    """DataFrame -> CSV with the project's conventions."""
    atomic_write_text(path, df.to_csv(index=False, lineterminator="\n"))


def read_frame(path, columns):
    """
    CSV -> DataFrame, checking the header is exactly `columns`.

    Raises DataError naming the file when it is missing or malformed.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: unreadable CSV ({e})") from e
    if list(df.columns) != list(columns):
        raise DataError(f"{path}: header {list(df.columns)} != expected {list(columns)}")
    return df


def _to_int(df, column, path):
    try:
        values = pd.to_numeric(df[column], errors="raise")
    except (ValueError, TypeError) as e:
        raise DataError(f"{path}: column {column!r} must hold integers ({e})") from e
    if not (values == values.round()).all():
        raise DataError(f"{path}: column {column!r} must hold integers")
    return values.astype(np.int64)


def _to_dates(df, column, path):
    try:
        return df[column].map(date.fromisoformat)
    except ValueError as e:
        raise DataError(f"{path}: column {column!r} must hold YYYY-MM-DD dates ({e})") from e


# ===========================================================================
# FLOWS
# ===========================================================================

def flows_frame(series):
    """dict station -> FlowSeries as one long DataFrame in file order."""
    frames = []
    for station in sorted(series):
        s = series[station]
        t = s.intervals_per_day
        day_labels = [d.isoformat() for d in s.dates]
        frames.append(pd.DataFrame({
            "station_id": station,
            "date": np.repeat(day_labels, t),
            "interval_index": np.arange(s.inflow.size) % t,
            "inflow": s.inflow.astype(np.int64),
            "outflow": s.outflow.astype(np.int64),
        }))
    return pd.concat(frames, ignore_index=True)[FLOWS_COLUMNS]


def write_flows(series, path):
    write_frame(flows_frame(series), path)


def read_flows(path):
    """
    flows.csv -> dict station_id -> FlowSeries.

    Every station must have every interval 0..T-1 of every date, exactly once.
    """
    df = read_frame(path, FLOWS_COLUMNS)
    if df.empty:
        raise DataError(f"{path}: no flow rows")
    df["station_id"] = _to_int(df, "station_id", path)
    df["interval_index"] = _to_int(df, "interval_index", path)
    df["inflow"] = _to_int(df, "inflow", path)
    df["outflow"] = _to_int(df, "outflow", path)
    df["date"] = _to_dates(df, "date", path)

    if (df[["inflow", "outflow"]] < 0).any().any():
        raise DataError(f"{path}: negative flow counts")
    t = int(df["interval_index"].max()) + 1
    if df["interval_index"].min() < 0:
        raise DataError(f"{path}: negative interval_index")
    if df.duplicated(["station_id", "date", "interval_index"]).any():
        raise DataError(f"{path}: duplicate (station_id, date, interval_index) rows")

    start, end = df["date"].min(), df["date"].max()
    days = (end - start).days + 1
    expected_rows = days * t
    df = df.sort_values(["station_id", "date", "interval_index"], kind="mergesort")

    series = {}
    for station, rows in df.groupby("station_id", sort=True):
        if len(rows) != expected_rows:
            raise DataError(
                f"{path}: station {station} has {len(rows)} rows, expected {days} days x {t} intervals"
            )
        series[int(station)] = FlowSeries(
            station_id=int(station),
            start_date=start,
            intervals_per_day=t,
            inflow=rows["inflow"].to_numpy(dtype=np.float64),
            outflow=rows["outflow"].to_numpy(dtype=np.float64),
        )
    return series


# ===========================================================================
# WEATHER & EDGES
# ===========================================================================

def write_weather(weather, path):
    """weather: dict date -> 0/1."""
    df = pd.DataFrame({
        "date": [d.isoformat() for d in sorted(weather)],
        "rain": [int(weather[d]) for d in sorted(weather)],
    })
    write_frame(df, path)


def read_weather(path):
    df = read_frame(path, WEATHER_COLUMNS)
    rain = _to_int(df, "rain", path)
    if not rain.isin([0, 1]).all():
        raise DataError(f"{path}: rain must be 0 or 1")
    dates = _to_dates(df, "date", path)
    if dates.duplicated().any():
        raise DataError(f"{path}: duplicate dates")
    return dict(zip(dates.tolist(), rain.tolist()))


def write_edges(network, path):
    df = pd.DataFrame(list(network.edges), columns=EDGES_COLUMNS)
    write_frame(df, path)


def read_edges(path, n_stations):
    df = read_frame(path, EDGES_COLUMNS)
    a = _to_int(df, "station_a", path)
    b = _to_int(df, "station_b", path)
    return NetworkSpec(n_stations=n_stations, edges=tuple(zip(a.tolist(), b.tolist())), kind="custom")


def load_corpus(data_dir):
    """
    Reads flows, weather and edges from a data directory.

    Returns (series, weather, network). Station ids must be 0..S-1.
    """
    data_dir = Path(data_dir)
    for name in (FLOWS_FILE, WEATHER_FILE, EDGES_FILE):
        if not (data_dir / name).exists():
            raise DataError(f"missing data file: {data_dir / name}")
    series = read_flows(data_dir / FLOWS_FILE)
    if sorted(series) != list(range(len(series))):
        raise DataError(f"{data_dir / FLOWS_FILE}: station ids must be 0..{len(series) - 1}")
    weather = read_weather(data_dir / WEATHER_FILE)
    network = read_edges(data_dir / EDGES_FILE, len(series))
    return series, weather, network


# ===========================================================================
# MANIFESTS
# ===========================================================================

def write_manifest(directory, manifest, name=MANIFEST_FILE):
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    atomic_write_text(Path(directory) / name, text)


def read_manifest(directory, name=MANIFEST_FILE):
    path = Path(directory) / name
    if not path.exists():
        raise DataError(f"missing file: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def read_run_manifest(directory):
    """
    The manifest of whatever produced `directory`.

    manifest.json when gen / train / grid / ablate wrote there, otherwise the
    eval or report manifest of a directory that only holds their outputs.
    """
    directory = Path(directory)
    for name in RUN_MANIFESTS:
        if (directory / name).exists():
            return read_manifest(directory, name)
    raise DataError(f"missing file: {directory / MANIFEST_FILE} (nor {', '.join(RUN_MANIFESTS[1:])})")


# ===========================================================================
# RUN DIRECTORIES (for the dashboard)
# ===========================================================================

def load_run(run_dir):
    """
    Everything a run directory holds, as DataFrames.

    Missing pieces come back as None, so a train-only run still loads.
    """
    run_dir = Path(run_dir)
    optional = {
        "epoch_log": EPOCH_LOG_FILE,
        "eval_report": EVAL_REPORT_FILE,
        "baseline_report": BASELINE_REPORT_FILE,
        "grid_results": GRID_RESULTS_FILE,
        "ablation": ABLATION_FILE,
    }
    run = {"manifest": read_run_manifest(run_dir)}
    for key, name in (("eval_manifest", EVAL_MANIFEST_FILE), ("report_manifest", REPORT_MANIFEST_FILE)):
        run[key] = read_manifest(run_dir, name) if (run_dir / name).exists() else None
    for key, name in optional.items():
        path = run_dir / name
        run[key] = pd.read_csv(path) if path.exists() else None
    report = run_dir / REPORT_FILE
    run["report_md"] = report.read_text(encoding="utf-8") if report.exists() else None
    pred_dir = run_dir / PREDICTIONS_DIR
    run["predictions"] = {
        p.stem: pd.read_csv(p) for p in sorted(pred_dir.glob("*.csv"))
    } if pred_dir.exists() else {}
    return run
