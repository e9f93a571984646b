"""Report figures: BLEU per system and scheme, and triangulated table growth."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps, so identical inputs give identical files
_PNG_META = {"Software": None}


def grouped_bars(path, groups: list, series: dict, ylabel: str, title: str, hline: float | None = None) -> None:
    """One bar group per entry of ``groups``; ``series`` maps a label to one value per group."""
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(groups) + 2), 3.2))
    n = max(len(series), 1)
    width = 0.8 / n
    x = np.arange(len(groups))
    for k, (label, values) in enumerate(series.items()):
        vals = [np.nan if v is None else v for v in values]
        ax.bar(x + (k - (n - 1) / 2) * width, vals, width, label=label)
    if hline is not None:
        ax.axhline(hline, color="k", linewidth=0.8, linestyle="--")
    ax.set_xticks(x)
    ax.set_xticklabels(groups, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def bleu_figure(path, rows: list, schemes: list, scores: dict) -> None:
    """``scores[(scheme, system)]`` -> BLEU."""
    series = {s: [scores.get((s, r)) for r in rows] for s in schemes}
    grouped_bars(path, rows, series, "BLEU", "Test BLEU by system")


def ratio_figure(path, pivots: list, schemes: list, ratios: dict) -> None:
    """``ratios[(scheme, pivot)]`` -> triangulated / larger component size."""
    series = {s: [ratios.get((s, p)) for p in pivots] for s in schemes}
    grouped_bars(path, pivots, series, "size ratio", "Triangulated vs component table size", hline=1.0)
