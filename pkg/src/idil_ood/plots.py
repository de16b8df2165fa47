"""Static figure rendering for the report path.  All figures are written to
files (SVG by default) next to the delimited output; nothing is interactive."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import PercentileTable


def plot_percentiles(table: PercentileTable, path: str | Path) -> None:
    """Cumulative max-softmax percentile curves with the least in-dist score marked."""
    thresholds = [r[0] for r in table.rows]
    pct_in = [r[1] for r in table.rows]
    pct_ood = [r[2] for r in table.rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thresholds, pct_in, label="in-distribution", color="tab:blue")
    ax.plot(thresholds, pct_ood, label="OOD", color="tab:red")
    ax.axvline(
        table.min_in_score,
        color="gray",
        linestyle="--",
        label=f"least in-dist score ({table.min_in_score:.3f})",
    )
    ax.set_xlabel("max-softmax score")
    ax.set_ylabel("% of population at or below score")
    ax.set_title(
        f"OOD mass at threshold: {100.0 * table.ood_mass_at_threshold:.1f}%"
    )
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_loss_curve(step_losses: list[float], path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(step_losses)), step_losses, color="tab:blue", linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_batch_sweep(rows: list[dict], path: str | Path) -> None:
    """Mean metric values versus batch size; one line per metric."""
    sizes = [r["batch_size"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, color in (
        ("fpr95", "tab:red"),
        ("err", "tab:orange"),
        ("auroc", "tab:blue"),
        ("aupr", "tab:green"),
    ):
        ax.plot(sizes, [r[key] for r in rows], marker="o", label=key.upper(), color=color)
    ax.set_xlabel("batch size")
    ax.set_ylabel("metric (%)")
    ax.set_xscale("log", base=2)
    ax.set_xticks(sizes, [str(s) for s in sizes])
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
