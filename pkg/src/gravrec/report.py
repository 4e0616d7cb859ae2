"""Delimited outputs and the figures rendered next to them.

Every CLI report lands twice: a CSV that is stable byte-for-byte across
reruns with the same seed, and a PNG rendered from the same rows. Figures
import matplotlib lazily so library users who never plot do not pay for it.
"""

from __future__ import annotations

import csv

import numpy as np

from .evaluation import MetricsTable, PleasureRealityRow
from .training import TrainingHistory

__all__ = [
    "write_metrics_csv",
    "write_history_csv",
    "write_pleasure_reality_csv",
    "write_whatif_csv",
    "format_whatif_text",
    "plot_history",
    "plot_metrics",
    "plot_pleasure_reality",
    "plot_whatif",
]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _writer(handle):
    return csv.writer(handle, lineterminator="\n")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_metrics_csv(path, tables: dict[str, MetricsTable]) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        out = _writer(handle)
        out.writerow(["system", "k", "recall", "ndcg", "n_events"])
        for system, table in tables.items():
            for k in table.k_list:
                out.writerow([system, k, repr(table.recall[k]), repr(table.ndcg[k]),
                              table.n_events])


def write_history_csv(path, history: TrainingHistory) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        out = _writer(handle)
        out.writerow(["epoch", "learning_rate", "train_loss", "validation_loss",
                      "is_best"])
        for row in history.rows:
            out.writerow([row.epoch, repr(row.learning_rate), repr(row.train_loss),
                          repr(row.validation_loss),
                          int(row.epoch == history.best_epoch)])


def write_pleasure_reality_csv(path, rows: list[PleasureRealityRow]) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        out = _writer(handle)
        out.writerow(["sequence_id", "unconscious_drift", "decision_gate_mean",
                      "shift_gate_mean"])
        for row in rows:
            out.writerow([row.sequence_id, repr(row.unconscious_drift),
                          repr(row.decision_gate_mean), repr(row.shift_gate_mean)])


def write_whatif_csv(path, sweep, catalog=None) -> None:
    """Rows of (delta_t, rank, item index, item id)."""
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        out = _writer(handle)
        out.writerow(["delta_t", "rank", "item_index", "item_id"])
        for dt, top in sweep:
            for rank, item in enumerate(top, start=1):
                item_id = catalog.index_to_id[int(item)] if catalog else str(int(item))
                out.writerow([repr(float(dt)), rank, int(item), item_id])


def format_whatif_text(sweep, catalog=None) -> str:
    """Aligned plain-text table, one row per drift duration."""
    def label(item):
        return catalog.index_to_id[int(item)] if catalog else str(int(item))

    body = [(f"{dt:.4f}", [label(i) for i in top]) for dt, top in sweep]
    k = max((len(items) for _, items in body), default=0)
    headers = ["delta_t"] + [f"top{r}" for r in range(1, k + 1)]
    rows = [[dt] + items for dt, items in body]
    widths = [max(len(h), *(len(r[c]) if c < len(r) else 0 for r in rows))
              for c, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def plot_history(path, history: TrainingHistory) -> None:
    plt = _pyplot()
    epochs = [row.epoch for row in history.rows]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(epochs, [row.train_loss for row in history.rows], label="train", lw=1.5)
    ax.plot(epochs, [row.validation_loss for row in history.rows], label="validation", lw=1.5)
    if history.best_epoch:
        ax.axvline(history.best_epoch, color="grey", ls="--", lw=1, label="best epoch")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss per prediction step")
    ax.legend(frameon=False)
    twin = ax.twinx()
    twin.plot(epochs, [row.learning_rate for row in history.rows],
              color="tab:red", alpha=0.4, lw=1)
    twin.set_ylabel("learning rate", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_metrics(path, tables: dict[str, MetricsTable]) -> None:
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8), sharex=True)
    for ax, metric in zip(axes, ("recall", "ndcg")):
        systems = list(tables)
        k_list = tables[systems[0]].k_list
        x = np.arange(len(k_list))
        width = 0.8 / max(len(systems), 1)
        for i, system in enumerate(systems):
            values = [getattr(tables[system], metric)[k] for k in k_list]
            ax.bar(x + i * width, values, width, label=system)
        ax.set_xticks(x + width * (len(systems) - 1) / 2)
        ax.set_xticklabels([str(k) for k in k_list])
        ax.set_xlabel("k")
        ax.set_ylabel(f"{metric}@k")
        ax.set_ylim(0, 1)
    axes[0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_pleasure_reality(path, rows: list[PleasureRealityRow]) -> None:
    """Scatter of drift distance against mean decision gate, with marginal
    histograms."""
    plt = _pyplot()
    x = np.array([row.unconscious_drift for row in rows])
    y = np.array([row.decision_gate_mean for row in rows])
    fig = plt.figure(figsize=(6, 6))
    grid = fig.add_gridspec(2, 2, width_ratios=(4, 1), height_ratios=(1, 4),
                            hspace=0.06, wspace=0.06)
    ax = fig.add_subplot(grid[1, 0])
    ax_top = fig.add_subplot(grid[0, 0], sharex=ax)
    ax_right = fig.add_subplot(grid[1, 1], sharey=ax)
    ax.scatter(x, y, s=14, alpha=0.6, edgecolors="none")
    ax.set_xlabel("mean unconscious drift per step")
    ax.set_ylabel("mean decision gate")
    ax.set_ylim(-0.02, 1.02)
    bins = max(5, min(30, len(rows) // 2))
    ax_top.hist(x, bins=bins, color="tab:blue", alpha=0.7)
    ax_right.hist(y, bins=bins, orientation="horizontal", color="tab:blue", alpha=0.7)
    ax_top.tick_params(labelbottom=False)
    ax_right.tick_params(labelleft=False)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)


def plot_whatif(path, sweep, catalog=None) -> None:
    """Item composition of the top-k list as the drift duration varies."""
    plt = _pyplot()
    cmap = plt.get_cmap("tab20")
    fig, ax = plt.subplots(figsize=(7, 4.2))
    dts = [dt for dt, _ in sweep]
    k = max(len(top) for _, top in sweep)
    for dt, top in sweep:
        for rank, item in enumerate(top, start=1):
            ax.scatter([dt], [rank], color=cmap(int(item) % 20), s=60)
            label = catalog.index_to_id[int(item)] if catalog else str(int(item))
            ax.annotate(label, (dt, rank), textcoords="offset points",
                        xytext=(5, 3), fontsize=7)
    ax.set_yticks(range(1, k + 1))
    ax.invert_yaxis()
    ax.set_xlabel("drift duration (time units)")
    ax.set_ylabel("rank")
    ax.set_xlim(min(dts) - 0.1, max(dts) + 0.25)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
