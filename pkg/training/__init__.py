# This file makes the 'training' folder a Python package.
#   metrics.py      MAE / RMSE and the per-horizon EvalReport
#   baselines.py    historical average and seasonal naive predictors
#   checkpoint.py   binary checkpoint files
#   trainer.py      training loop, prediction and evaluation
#   experiments.py  grid search and ablation runs
#   report.py       Markdown tables, prediction series and dashboard figures
