"""Figure rendering for metric tables.

Charts are drawn with matplotlib and written wherever the output path points;
an .svg suffix produces a deterministic SVG (fixed hash salt, no embedded
date), which keeps figures diffable across reruns.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .analysis import MetricTable  # noqa: E402

plt.rcParams["svg.hashsalt"] = "commprof"
plt.rcParams["figure.figsize"] = (6.4, 4.2)
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


def render_table(table: MetricTable, path: str | Path, *, logy: bool = False) -> Path:
    """One line per column over the table's groups, markers at data points."""
    path = Path(path)
    fig, ax = plt.subplots()
    for column in table.columns:
        xs = [g for g in table.groups if (g, column) in table.cells]
        if not xs:
            continue
        ys = [table.cells[(g, column)] for g in xs]
        ax.plot(xs, ys, marker="o", label=column)
    ax.set_xlabel(table.group_label)
    ax.set_ylabel(table.name)
    ax.set_title(table.name.replace("_", " "))
    if table.group_label == "nranks" and len(table.groups) > 1:
        ax.set_xscale("log", base=2)
        ax.set_xticks(table.groups)
        ax.xaxis.set_major_formatter(plt.FuncFormatter(lambda v, _: f"{int(v)}"))
        ax.minorticks_off()
    if logy:
        ax.set_yscale("log")
    if table.columns:
        ax.legend(fontsize="small")
    fig.tight_layout()
    metadata = {"Date": None} if path.suffix == ".svg" else None
    fig.savefig(path, metadata=metadata)
    plt.close(fig)
    return path
