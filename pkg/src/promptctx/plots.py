"""Score figures for grid runs: one PNG per metric, data size on the x
axis, one line per prompt plan.

Rendering is forced through the Agg backend with fixed figure geometry
and stripped PNG metadata, so the same grid produces byte-identical
figures on every run.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_METRIC_TITLES = {
    "bleu2": "BLEU-2 (x100)",
    "meteor": "METEOR (x100)",
    "cider": "CIDEr (x10)",
}

_STYLES = ("o-", "s--", "^-.", "v:", "D-", "*--", "P-.", "X:")


def render_metric_figures(
    series: dict[str, list[tuple[str, str, int, float]]], out_dir
) -> dict[str, Path]:
    """Write plot_<metric>.png per metric with at least one data point.

    Each series entry is (train label, inference label, training record
    count, table-scale score). Lines are keyed by the label pair and
    ordered by first appearance, points within a line by record count.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for metric, points in series.items():
        if not points:
            continue
        lines: dict[tuple[str, str], list[tuple[int, float]]] = {}
        for train_label, infer_label, count, value in points:
            lines.setdefault((train_label, infer_label), []).append((count, value))
        fig, ax = plt.subplots(figsize=(6.4, 4.0), dpi=100)
        for i, (key, pts) in enumerate(sorted(lines.items())):
            pts = sorted(pts)
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            label = f"{key[0]} / {key[1]}"
            ax.plot(xs, ys, _STYLES[i % len(_STYLES)], label=label, markersize=5)
        ax.set_xlabel("training records")
        ax.set_ylabel(_METRIC_TITLES.get(metric, metric))
        ax.set_title(_METRIC_TITLES.get(metric, metric))
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out / f"plot_{metric}.png"
        # Software: None drops the matplotlib version chunk so PNG bytes
        # depend only on the data.
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        paths[metric] = path
    return paths
