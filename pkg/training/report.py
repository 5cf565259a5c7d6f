"""
Report building: Markdown tables, prediction series and charts

Everything here takes DataFrames or EvalReports and returns text, frames or
plotly figures; nothing touches Streamlit. The CLI writes the results to a
run directory and app.py shows the same figures in the browser.

=== TABLE LAYOUTS ===

Comparison table (one row per horizon, one MAE/RMSE pair per model):

    | Horizon | historical_average MAE | historical_average RMSE | ... | MPSTN MAE | MPSTN RMSE |
    | 15 min  | ...                                                              |

Ablation table: the same layout with the variants full / no_gnn /
no_weather as the models.
"""

from pathlib import Path

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from pipeline.folding import CHANNELS
from training.metrics import EvalReport
from utils.errors import DataError
from utils.storage import PREDICTIONS_DIR, write_frame

# ---------------------------------------------------------------------------
# CONFIGURATION
# ---------------------------------------------------------------------------
SERIES_COLUMNS = [
    "station_id", "date", "interval_index", "horizon_min", "channel", "predicted", "actual",
]
DECIMALS = 3


# ===========================================================================
# MARKDOWN
# ===========================================================================

def _markdown_table(header, rows):
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" if i == 0 else "---:" for i in range(len(header))) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def _fmt(value):
    return "n/a" if value is None or not np.isfinite(value) else f"{value:.{DECIMALS}f}"


def comparison_markdown(reports):
    """
    reports: dict model name -> EvalReport, in column order.

    All reports must cover the same horizons.
    """
    if not reports:
        raise DataError("no reports to tabulate")
    names = list(reports)
    horizons = reports[names[0]].horizons_min
    for name in names:
        if reports[name].horizons_min != horizons:
            raise DataError(f"report {name!r} covers horizons {reports[name].horizons_min}, expected {horizons}")

    header = ["Horizon"] + [f"{name} {metric}" for name in names for metric in ("MAE", "RMSE")]
    rows = []
    for h, minutes in enumerate(horizons):
        row = [f"{minutes} min"]
        for name in names:
            row += [_fmt(reports[name].mae[h]), _fmt(reports[name].rmse[h])]
        rows.append(row)
    return _markdown_table(header, rows)


def ablation_markdown(table):
    """Long ablation table (horizon_min, mae, rmse, variant) -> Markdown."""
    reports = {
        variant: EvalReport.from_frame(rows)
        for variant, rows in table.groupby("variant", sort=False)
    }
    return comparison_markdown(reports)


def grid_markdown(results, top=10):
    header = ["Rank", "GNN layers", "Feature dim", "Embed dim", "Batch", "Best epoch", "Val MAE"]
    rows = []
    for _, r in results[results["status"] == "ok"].head(top).iterrows():
        rows.append([str(int(r["rank"])), str(r["gnn_layers"]), str(r["feature_dim"]), str(r["weather_embed_dim"]),
                     str(r["batch_size"]), str(int(r["best_epoch"])), _fmt(float(r["val_mae"]))])
    return _markdown_table(header, rows)


def render_markdown_report(comparison=None, ablation=None, grid=None, manifest=None, title="Forecast report"):
    """
    Puts together whichever sections are available.

    Args:
        comparison: dict name -> EvalReport (model and baselines on test)
        ablation: long ablation DataFrame
        grid: ranked grid results DataFrame
        manifest: the run manifest, summarised at the top
    """
    parts = [f"# {title}", ""]
    if manifest:
        parts += [
            f"- command: `{manifest.get('command', '?')}`",
            f"- seed: {manifest.get('seed', '?')}",
            f"- status: {manifest.get('status', '?')}",
            "",
        ]
    if comparison:
        parts += ["## Test error by horizon (persons per interval)", "", comparison_markdown(comparison), ""]
    if ablation is not None and not ablation.empty:
        parts += ["## Ablation", "", ablation_markdown(ablation), ""]
    if grid is not None and not grid.empty:
        parts += ["## Grid search (best points)", "", grid_markdown(grid), ""]
    if len(parts) == 2:
        parts += ["_Nothing to report yet._", ""]
    return "\n".join(parts)


# ===========================================================================
# PREDICTION SERIES
# ===========================================================================

def prediction_series(pred, samples, station_ids, interval_minutes=15):
    """
    Predictions next to the observed values, one row per
    (sample, station, horizon, channel).

    pred: [N, S, 2, Hs] in persons per interval, in the order of `samples`.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if len(samples) != pred.shape[0]:
        raise DataError(f"{pred.shape[0]} predictions for {len(samples)} samples")
    actual = np.stack([s.targets for s in samples])
    n, s, c, hs = pred.shape
    grid = np.indices((n, s, c, hs)).reshape(4, -1)
    sample_idx, station_idx, channel_idx, horizon_idx = grid
    frame = pd.DataFrame({
        "station_id": np.asarray(station_ids)[station_idx],
        "date": np.array([x.prediction_date.isoformat() for x in samples])[sample_idx],
        "interval_index": np.array([x.interval_index for x in samples])[sample_idx],
        "horizon_min": (horizon_idx + 1) * interval_minutes,
        "channel": np.asarray(CHANNELS)[channel_idx],
        "predicted": pred.reshape(-1),
        "actual": actual.reshape(-1),
    })
    return frame[SERIES_COLUMNS]


def write_prediction_series(frame, run_dir):
    """One CSV per station under <run_dir>/predictions/. Returns the paths written."""
    paths = []
    for station, rows in frame.groupby("station_id", sort=True):
        path = Path(run_dir) / PREDICTIONS_DIR / f"station_{int(station)}.csv"
        write_frame(rows.reset_index(drop=True), path)
        paths.append(path)
    return paths


# ===========================================================================
# FIGURES (used by the dashboard)
# ===========================================================================

def epoch_log_figure(epoch_log):
    """Training loss and validation MAE per epoch, on two y axes."""
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=epoch_log["epoch"], y=epoch_log["train_l1"], name="train L1 (normalized)"))
    fig.add_trace(go.Scatter(x=epoch_log["epoch"], y=epoch_log["val_mae"], name="val MAE", yaxis="y2"))
    fig.update_layout(
        xaxis_title="epoch",
        yaxis={"title": "train L1"},
        yaxis2={"title": "val MAE (persons)", "overlaying": "y", "side": "right"},
        legend={"orientation": "h"},
    )
    return fig


def prediction_figure(series, channel="inflow", horizon_min=15):
    """Predicted vs actual for one station's series, one channel, one horizon."""
    rows = series[(series["channel"] == channel) & (series["horizon_min"] == horizon_min)].copy()
    rows["time"] = rows["date"].astype(str) + " #" + rows["interval_index"].astype(str)
    long = rows.melt(id_vars=["time"], value_vars=["actual", "predicted"], var_name="series", value_name="flow")
    return px.line(long, x="time", y="flow", color="series",
                   title=f"{channel}, {horizon_min} min ahead")


def ablation_figure(table):
    """MAE per horizon for each variant, grouped bars."""
    return px.bar(table, x="horizon_min", y="mae", color="variant", barmode="group",
                  labels={"horizon_min": "horizon (min)", "mae": "MAE"})
