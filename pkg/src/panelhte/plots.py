"""Render sweep results to figures plus a small summary table.

Everything here consumes the sweep CSV (via harness.read_sweep_csv), never
live records, so reports can be regenerated from archived output alone.
Figures are PNG via the Agg backend; the summary.csv sits alongside them
with the same 17-significant-digit formatting as the sweep files.
"""

from __future__ import annotations

import os
from collections import Counter

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .errors import ValidationError  # noqa: E402
from .harness import SweepTable, fit_rate_slope, median_errors  # noqa: E402

DEFAULT_ERROR_COLUMN = "err_effect_two_infty_norm"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _per_n(table: SweepTable, column: str) -> dict[int, list[float]]:
    out = {}
    for n in table.n_values():
        values = table.floats(column, n=n)
        if values:
            out[n] = values
    if not out:
        raise ValidationError(f"no usable values in column {column!r}")
    return out


def plot_error_vs_n(table: SweepTable, path, column: str = DEFAULT_ERROR_COLUMN):
    """Log-log per-trial errors, medians, and the fitted rate line."""
    groups = _per_n(table, column)
    medians = median_errors(table, column)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for n, values in groups.items():
        ax.plot([n] * len(values), values, "o", color="#88aadd", alpha=0.35,
                markersize=4, markeredgewidth=0)
    ns = [n for n, _ in medians]
    meds = [e for _, e in medians]
    ax.plot(ns, meds, "o-", color="#1f3d7a", label="median")
    caption = "rate fit needs two sizes"
    if len(medians) >= 2:
        slope, intercept, r2 = fit_rate_slope(medians)
        grid = np.geomspace(min(ns), max(ns), 64)
        ax.plot(grid, np.exp(intercept) * grid ** slope, "--", color="#c0392b",
                label=f"fit slope {slope:.3f} (r2 {r2:.3f})")
        caption = f"slope {slope:.4f}"
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("units n")
    ax.set_ylabel(column)
    ax.set_title(f"error vs panel size ({caption})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_rank_selection(table: SweepTable, path):
    """Distribution of selected ranks per size, both actions side by side."""
    ns = table.n_values()
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    width = 0.38
    positions = np.arange(len(ns))
    for offset, action in ((-width / 2, 0), (width / 2, 1)):
        counters = []
        for n in ns:
            ranks = [int(v) for v in table.floats(f"selected_rank_{action}", n=n)]
            counters.append(Counter(ranks))
        observed = sorted({r for c in counters for r in c})
        bottoms = np.zeros(len(ns))
        for rank_value in observed:
            heights = np.array([c.get(rank_value, 0) for c in counters], dtype=float)
            totals = np.array([sum(c.values()) or 1 for c in counters], dtype=float)
            fraction = heights / totals
            ax.bar(positions + offset, fraction, width, bottom=bottoms,
                   label=f"rank {rank_value} (action {action})")
            bottoms += fraction
    ax.set_xticks(positions)
    ax.set_xticklabels([str(n) for n in ns])
    ax.set_xlabel("units n")
    ax.set_ylabel("fraction of trials")
    ax.set_title("selected rank by size and action")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_error_distribution(table: SweepTable, path,
                            column: str = DEFAULT_ERROR_COLUMN):
    groups = _per_n(table, column)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    ns = sorted(groups)
    ax.boxplot([groups[n] for n in ns])
    ax.set_xticklabels([str(n) for n in ns])
    ax.set_yscale("log")
    ax.set_xlabel("units n")
    ax.set_ylabel(column)
    ax.set_title("error distribution by panel size")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def write_summary_csv(table: SweepTable, path,
                      column: str = DEFAULT_ERROR_COLUMN):
    """Per-size quartiles, failure counts, and rank-agreement rates; the
    fitted slope rides along as a comment line."""
    medians = median_errors(table, column)
    fit_comment = "# fit unavailable (need >= 2 sizes)"
    if len(medians) >= 2:
        slope, intercept, r2 = fit_rate_slope(medians)
        fit_comment = (f"# fit column={column} slope={_fmt(slope)} "
                       f"intercept={_fmt(intercept)} r_squared={_fmt(r2)}")
    lines = [f"# summary of {column}", fit_comment,
             "n,m,trials,failures,q25,median,q75,modal_rank_0,modal_rank_1"]
    for n in table.n_values():
        rows_n = [r for r in table.rows if int(r["n"]) == n]
        failures = sum(1 for r in rows_n if r.get("error"))
        values = np.array(table.floats(column, n=n))
        q25, med, q75 = (np.quantile(values, q) for q in (0.25, 0.5, 0.75))
        modal = []
        for action in (0, 1):
            ranks = [int(v) for v in table.floats(f"selected_rank_{action}", n=n)]
            modal.append(Counter(ranks).most_common(1)[0][0] if ranks else -1)
        m = int(rows_n[0]["m"])
        lines.append(
            f"{n},{m},{len(rows_n)},{failures},{_fmt(q25)},{_fmt(med)},"
            f"{_fmt(q75)},{modal[0]},{modal[1]}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def render_report(table: SweepTable, out_dir,
                  column: str = DEFAULT_ERROR_COLUMN) -> dict:
    """All figures plus summary.csv into out_dir; returns {name: path}."""
    os.makedirs(out_dir, exist_ok=True)
    return {
        "error_vs_n": plot_error_vs_n(
            table, os.path.join(out_dir, "error_vs_n.png"), column),
        "rank_selection": plot_rank_selection(
            table, os.path.join(out_dir, "rank_selection.png")),
        "error_distribution": plot_error_distribution(
            table, os.path.join(out_dir, "error_distribution.png"), column),
        "summary": write_summary_csv(
            table, os.path.join(out_dir, "summary.csv"), column),
    }
