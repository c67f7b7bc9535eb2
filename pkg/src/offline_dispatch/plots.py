"""Figure rendering for reports and training logs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .pipeline import EvalReport


def save_gap_chart(reports: list[EvalReport], path) -> None:
    """Bar chart of mean gap per method with a std whisker."""
    ordered = sorted(reports, key=lambda r: r.mean_gap)
    labels = [r.method for r in ordered]
    means = [r.mean_gap for r in ordered]
    stds = [r.std_gap for r in ordered]

    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels)), 3.2))
    ax.bar(labels, means, yerr=stds, capsize=4, color="#4878a8")
    ax.set_ylabel("gap to reference (%)")
    ax.set_axisbelow(True)
    ax.grid(axis="y", alpha=0.4)
    for tick in ax.get_xticklabels():
        tick.set_rotation(20)
        tick.set_ha("right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_training_curves(log_rows: list[dict], path) -> None:
    """Loss and eval-gap curves from training log rows."""
    steps = [r["step"] for r in log_rows]
    losses = [r.get("loss_total") for r in log_rows]
    eval_points = [
        (r["step"], r["eval_gap"]) for r in log_rows if r.get("eval_gap") is not None
    ]

    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    axes[0].plot(steps, losses, lw=0.8)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("total loss")
    axes[0].grid(alpha=0.4)
    if eval_points:
        xs, ys = zip(*eval_points)
        axes[1].plot(xs, ys, marker="o", ms=3)
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("eval gap (%)")
    axes[1].grid(alpha=0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
