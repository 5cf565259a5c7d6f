"""
Passenger Flow Forecaster - Results Dashboard

This is the file Streamlit runs:

    streamlit run app.py

It reads a run directory written by cli.py (train, eval, grid, ablate,
report) and shows:
1. What was run (the manifest: command, seed, status, configs)
2. The training curve (train loss and validation MAE per epoch)
3. Test error by horizon, next to the baselines if they were scored
4. The ablation comparison and the grid search ranking, if present
5. Predicted vs actual flow for any station

The dashboard only reads files. Training and evaluation happen in the CLI.
"""

import os
from pathlib import Path

import streamlit as st

from training.metrics import EvalReport
from training.report import (
    ablation_figure,
    comparison_markdown,
    epoch_log_figure,
    prediction_figure,
)
from utils.errors import DataError
from utils.storage import RUN_MANIFESTS, load_run

# ---------------------------------------------------------------------------
# PAGE CONFIG: Must be the first Streamlit command
# ---------------------------------------------------------------------------
st.set_page_config(
    page_title="🚇 Passenger Flow Forecaster",
    page_icon="🚇",
    layout="wide"
)

DEFAULT_RUN_DIR = os.environ.get("MPSTN_RUN_DIR", "runs")


# ---------------------------------------------------------------------------
# RUN LOADING
#
# st.cache_data keeps the parsed files between reruns; the key is the path,
# so picking another run loads it fresh.
# ---------------------------------------------------------------------------
@st.cache_data
def cached_run(run_dir):
    return load_run(run_dir)


def list_runs(root):
    """Every directory under `root` (including root itself) that holds a manifest."""
    root = Path(root)
    if not root.exists():
        return []
    return sorted({str(p.parent) for name in RUN_MANIFESTS for p in root.glob(f"**/{name}")})


# ---------------------------------------------------------------------------
# SIDEBAR: choose a run
# ---------------------------------------------------------------------------
st.sidebar.header("Run")
root = st.sidebar.text_input("Runs folder", DEFAULT_RUN_DIR)
runs = list_runs(root)

st.title("🚇 Passenger Flow Forecaster")

if not runs:
    st.info(f"No runs found under `{root}`. Train one with `python cli.py train --data data/ --out {root}/first`.")
    st.stop()

run_dir = st.sidebar.selectbox("Run directory", runs)
try:
    run = cached_run(run_dir)
except DataError as e:
    st.error(f"Could not read {run_dir}: {e}")
    st.stop()

manifest = run["manifest"]

# ---------------------------------------------------------------------------
# HEADER
# ---------------------------------------------------------------------------
st.subheader(f"📁 {run_dir}")

col1, col2, col3 = st.columns(3)
with col1:
    st.metric("Command", manifest.get("command", "?"))
with col2:
    st.metric("Seed", manifest.get("seed", "?"))
with col3:
    st.metric("Status", manifest.get("status", "?"))

if manifest.get("status") == "failed":
    st.error(f"This run failed: {manifest.get('error', 'unknown error')}")
elif manifest.get("partial"):
    st.warning("Some parts of this run failed; see the manifest for details.")
else:
    st.success("Run completed.")

with st.expander("Manifest"):
    st.json(manifest)
    for key in ("eval_manifest", "report_manifest"):
        if run[key] is not None and run[key] != manifest:
            st.caption(key.replace("_", " "))
            st.json(run[key])

# ---------------------------------------------------------------------------
# TRAINING CURVE
# ---------------------------------------------------------------------------
if run["epoch_log"] is not None:
    st.markdown("---")
    st.header("📉 Training")
    log = run["epoch_log"]
    best = log.loc[log["val_mae"].idxmin()]
    st.write(f"**{len(log)} epochs**, best validation MAE **{best['val_mae']:.3f}** at epoch {int(best['epoch'])}")
    st.plotly_chart(epoch_log_figure(log), use_container_width=True)

# ---------------------------------------------------------------------------
# TEST ERROR
# ---------------------------------------------------------------------------
reports = {}
for key in ("baseline_report", "eval_report"):
    frame = run[key]
    if frame is not None:
        for variant, rows in frame.groupby("variant", sort=False):
            label = "MPSTN" if key == "eval_report" and variant == "full" else variant
            reports[label] = EvalReport.from_frame(rows)

if reports:
    st.markdown("---")
    st.header("🎯 Test error by horizon")
    st.markdown(comparison_markdown(reports))
    st.caption("Persons per interval, averaged over stations, both directions and all test samples.")

# ---------------------------------------------------------------------------
# ABLATION & GRID
# ---------------------------------------------------------------------------
if run["ablation"] is not None:
    st.markdown("---")
    st.header("🧪 Ablation")
    st.plotly_chart(ablation_figure(run["ablation"]), use_container_width=True)
    st.dataframe(run["ablation"], use_container_width=True)

if run["grid_results"] is not None:
    st.markdown("---")
    st.header("🔎 Grid search")
    grid = run["grid_results"]
    failed = grid[grid["status"] != "ok"]
    if not failed.empty:
        st.warning(f"{len(failed)} of {len(grid)} points failed.")
    st.dataframe(grid, use_container_width=True)

# ---------------------------------------------------------------------------
# PREDICTIONS
# ---------------------------------------------------------------------------
if run["predictions"]:
    st.markdown("---")
    st.header("🚉 Predicted vs actual")
    station = st.selectbox("Station", list(run["predictions"]))
    series = run["predictions"][station]
    col1, col2 = st.columns(2)
    with col1:
        channel = st.radio("Direction", ["inflow", "outflow"], horizontal=True)
    with col2:
        horizon = st.select_slider("Minutes ahead", sorted(series["horizon_min"].unique()))
    st.plotly_chart(prediction_figure(series, channel, int(horizon)), use_container_width=True)
elif run["report_md"] is None:
    st.info("Run `python cli.py report --run <dir> --data <data dir>` to add per-station prediction series.")
