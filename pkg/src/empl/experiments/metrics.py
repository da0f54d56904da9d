"""Median-prediction metrics in the conventions of a results table.

MAE and MSE are reported x1000, EM1 and EM2 x100 and histogram
intersection in percent.
"""

from __future__ import annotations

import numpy as np

from .. import losses, nn

METRICS = ("MAE", "MSE", "EM1", "EM2", "IS")
SCALE = {"MAE": 1000.0, "MSE": 1000.0, "EM1": 100.0, "EM2": 100.0, "IS": 100.0}


class EmptyTestSet(ValueError):
    pass


def metric_values(labels, pred) -> dict:
    """Unscaled means over the test set of each metric."""
    return {
        "MAE": losses.mae(labels, pred),
        "MSE": losses.mse(labels, pred),
        "EM1": losses.w1(labels, pred),
        "EM2": losses.em2(labels, pred),
        "IS": losses.histogram_intersection(labels, pred),
    }


def predict_density(net: nn.Network, x, tau=0.5) -> np.ndarray:
    return nn.forward(net, x, tau if net.tau_input else None, mode="eval").density


def evaluate_metrics(net: nn.Network, x, labels, tau: float = 0.5) -> dict:
    """Scaled metrics of the predicted tau-density against the labels."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(x) == 0 or len(labels) == 0:
        raise EmptyTestSet("cannot evaluate metrics on an empty test set")
    raw = metric_values(labels, predict_density(net, x, tau))
    return {k: raw[k] * SCALE[k] for k in METRICS}


def format_metric_table(rows: dict) -> str:
    """``rows`` maps a row name to a metric dict; fixed-width text table."""
    header = f"{'model':<24}" + "".join(f"{m:>12}" for m in METRICS)
    lines = [header]
    for name, vals in rows.items():
        lines.append(f"{name:<24}" + "".join(f"{vals[m]:>12.4f}" for m in METRICS))
    return "\n".join(lines) + "\n"
