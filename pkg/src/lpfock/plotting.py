"""Figures for sweep reports: one PNG per metric, values with bracket bars."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

STYLE = {
    "font.family": "serif",
    "font.size": 8,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "lines.linewidth": 1.0,
    "lines.markersize": 3,
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}


def figure_size(width: float = 4.5) -> tuple[float, float]:
    return width, width * GOLDEN


def save(fig, path: Path) -> Path:
    # Software metadata carries the matplotlib version; dropping it keeps files reproducible.
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _slug(text: str) -> str:
    keep = [ch if ch.isalnum() else "-" for ch in text.lower()]
    return "-".join(filter(None, "".join(keep).split("-")))


def _label(params: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in params.items())


def render(experiment: str, rows: list[dict], outdir: Path) -> list[Path]:
    """Draw each metric against the grid point, with [lower, upper] as error bars.

    ``rows`` are CSV-style dicts with keys params, metric, value, lower, upper, pass.
    """
    by_metric = defaultdict(list)
    for r in rows:
        by_metric[r["metric"]].append(r)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    with plt.rc_context(STYLE):
        for metric, items in by_metric.items():
            fig, ax = plt.subplots(figsize=figure_size())
            xs = range(len(items))
            vals = [r["value"] for r in items]
            lo = [max(0.0, r["value"] - r["lower"]) if r["lower"] is not None else 0.0 for r in items]
            hi = [max(0.0, r["upper"] - r["value"]) if r["upper"] is not None else 0.0 for r in items]
            colors = ["tab:blue" if r["pass"] else "tab:red" for r in items]
            ax.errorbar(xs, vals, yerr=[lo, hi], fmt="none", ecolor="0.5", capsize=2)
            ax.scatter(xs, vals, c=colors, zorder=3)
            ax.set_xticks(list(xs))
            ax.set_xticklabels([_label(r["params"]) for r in items], rotation=60, ha="right")
            ax.set_ylabel(metric)
            ax.set_title(f"{experiment}: {metric}")
            ax.grid(alpha=0.3)
            paths.append(save(fig, outdir / f"{_slug(experiment)}--{_slug(metric)}.png"))
    return paths
