"""SVG figures for experiment run directories.  Files are written, never shown."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# glyphs as paths and a fixed hash salt keep the SVG self-contained and reproducible
plt.rcParams["svg.fonttype"] = "path"
plt.rcParams["svg.hashsalt"] = "empl"
plt.rcParams["path.simplify"] = False


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def band_plot(path, taus, predicted, truth=None, lower=None, upper=None, title=""):
    """Predicted cumulative quantiles per level (lines) against truth markers."""
    predicted = np.asarray(predicted)
    bins = np.arange(1, predicted.shape[1] + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    cmap = plt.get_cmap("viridis")
    for t, tau in enumerate(taus):
        ax.plot(bins, predicted[t], color=cmap(t / max(len(taus) - 1, 1)), lw=1.2,
                label=f"{tau:.2f}")
    if truth is not None:
        truth = np.asarray(truth)
        for t in range(len(taus)):
            ax.plot(bins, truth[t], ls="none", marker="_", ms=10, color="0.3")
    if lower is not None and upper is not None:
        ax.fill_between(bins, lower, upper, color="orange", alpha=0.25, step="mid", label="reference")
    ax.set_xlabel("bin")
    ax.set_ylabel("cumulative value")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=6, ncol=2, title="tau", title_fontsize=6)
    _save(fig, path)


def cdf_plot(path, truth_sorted, taus, predicted, gaussian=None, title=""):
    """Empirical CDF of one bin's cumulative value against predicted quantiles."""
    truth_sorted = np.asarray(truth_sorted)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ecdf = np.arange(1, len(truth_sorted) + 1) / len(truth_sorted)
    ax.step(truth_sorted, ecdf, where="post", color="k", label="truth")
    ax.plot(predicted, taus, color="tab:blue", label="EMPL")
    if gaussian is not None:
        ax.plot(gaussian, taus, color="tab:red", ls="--", label="Gaussian")
    ax.set_xlabel("cumulative value")
    ax.set_ylabel("CDF")
    ax.set_title(title)
    ax.legend(fontsize=7)
    _save(fig, path)


def calibration_plot(path, alphas, curves: dict, title=""):
    """Coverage against nominal level, with the identity line for reference."""
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot([0, 1], [0, 1], color="0.5", ls=":", label="identity")
    for name, cov in curves.items():
        ax.plot(alphas, cov, marker="o", ms=3, label=name)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("alpha")
    ax.set_ylabel("coverage")
    ax.set_title(title)
    ax.legend(fontsize=7)
    _save(fig, path)


def loss_curve_plot(path, iterations, values, title="training loss"):
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(iterations, values)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean batch loss")
    ax.set_yscale("log")
    ax.set_title(title)
    _save(fig, path)
