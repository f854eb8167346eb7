"""Report figures rendered next to the delimited outputs.

Every CLI report path that writes a CSV also drops a PNG beside it: the
training loss curve, the per-fold accuracy chart, and the per-run latency
plot.  Rendering is headless (Agg backend).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

_DPI = 120


def save_loss_curve(trace, path, title: str = "training loss") -> None:
    """Loss against iteration, with epoch boundaries marked."""
    iterations = [r.iteration for r in trace.records]
    losses = [r.loss for r in trace.records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(iterations, losses, linewidth=0.9)
    boundaries = [r.iteration for prev, r in zip(trace.records, trace.records[1:])
                  if r.epoch != prev.epoch]
    for b in boundaries:
        ax.axvline(b, color="0.85", linewidth=0.6, zorder=0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_fold_accuracy(report, path) -> None:
    """Per-fold accuracy bars with the cross-validation mean as a line."""
    folds = list(range(len(report.per_fold_accuracy)))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(folds, report.per_fold_accuracy, color="tab:blue")
    ax.axhline(report.mean, color="tab:red", linewidth=1.2,
               label=f"mean = {report.mean:.4f}")
    ax.set_xlabel("fold")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(f"{report.network_id}: {report.k}-fold cross-validation")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_latency_runs(report, path) -> None:
    """Per-run latencies with the mean highlighted."""
    runs = list(range(len(report.latencies_ms)))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(runs, report.latencies_ms, marker=".", linewidth=0.8)
    ax.axhline(report.mean_ms, color="tab:red", linewidth=1.2,
               label=f"mean = {report.mean_ms:.3f} ms")
    ax.set_xlabel("run")
    ax.set_ylabel("latency (ms)")
    ax.set_title(f"{report.network_id}: single-image inference latency")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
