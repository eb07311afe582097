"""Figure rendering for trace and experiment CSV outputs.

Every plot function takes a CSV produced elsewhere in the package and writes
a PNG next to it (or to an explicit path), so the delimited output remains
the primary artifact and the figures are a convenience layer on top.
"""

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _read_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    return header, rows


def _default_out(csv_path, suffix=""):
    base, _ = os.path.splitext(csv_path)
    return f"{base}{suffix}.png"


def plot_trace(csv_path, out_path=None):
    """Log-scale convergence paths of whichever trace metrics are present."""
    header, rows = _read_rows(csv_path)
    out_path = out_path or _default_out(csv_path)
    cols = {name: idx for idx, name in enumerate(header)}
    iters = np.array([int(r[cols["iter"]]) for r in rows])
    labels = {
        "dql": "loss difference",
        "est_err": "estimation error",
        "alg_err": "algorithm error",
        "consensus_dev": "consensus deviation",
    }
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for key, label in labels.items():
        if key not in cols:
            continue
        vals = np.array([float(r[cols[key]]) if r[cols[key]] else np.nan
                         for r in rows])
        if np.all(np.isnan(vals)):
            continue
        ax.plot(iters, vals, label=label, linewidth=1.3)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("value (log scale)")
    ax.legend(frameon=False)
    ax.grid(True, which="both", alpha=0.25)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_error_summary(csv_path, out_path=None):
    """Bar chart of mean test loss per method with one-sd whiskers."""
    header, rows = _read_rows(csv_path)
    out_path = out_path or _default_out(csv_path)
    cols = {name: idx for idx, name in enumerate(header)}
    methods = [r[cols["method"]] for r in rows]
    means = np.array([float(r[cols["mean_test_loss"]]) for r in rows])
    sds = np.array([float(r[cols["sd_test_loss"]]) for r in rows])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    pos = np.arange(len(methods))
    ax.bar(pos, means, yerr=sds, capsize=4, color="#4878a8")
    ax.set_xticks(pos, methods, rotation=20)
    ax.set_ylabel("mean test quantile loss")
    ax.grid(True, axis="y", alpha=0.25)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_coverage_summary(csv_path, out_path=None, level=0.95):
    """Coverage and width bars per machine/mode with the nominal level marked."""
    header, rows = _read_rows(csv_path)
    out_path = out_path or _default_out(csv_path)
    cols = {name: idx for idx, name in enumerate(header)}
    labels = [f"m{r[cols['machine']]}/{r[cols['mode']]}" for r in rows]
    aecp = np.array([float(r[cols["aecp"]]) for r in rows])
    width = np.array([float(r[cols["avg_width"]]) for r in rows])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.6, 3.8))
    pos = np.arange(len(labels))
    ax1.bar(pos, aecp, color="#4878a8")
    ax1.axhline(level, color="#a83232", linestyle="--", linewidth=1.0,
                label=f"nominal {level:g}")
    ax1.set_xticks(pos, labels, rotation=20)
    ax1.set_ylim(0.0, 1.05)
    ax1.set_ylabel("empirical coverage")
    ax1.legend(frameon=False)
    ax2.bar(pos, width, color="#6aa84f")
    ax2.set_xticks(pos, labels, rotation=20)
    ax2.set_ylabel("average interval width")
    for ax in (ax1, ax2):
        ax.grid(True, axis="y", alpha=0.25)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_file(csv_path, out_path=None):
    """Dispatch on the CSV header and render the matching figure."""
    header, _ = _read_rows(csv_path)
    if "iter" in header:
        return plot_trace(csv_path, out_path)
    if "mean_test_loss" in header:
        return plot_error_summary(csv_path, out_path)
    if "aecp" in header:
        return plot_coverage_summary(csv_path, out_path)
    raise ValueError(f"{csv_path}: unrecognized CSV schema, cannot choose a plot")
