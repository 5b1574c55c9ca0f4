"""Report figures, rendered off-screen next to the CSV files."""

from __future__ import annotations

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def eval_figures(report, csv_path) -> List[Path]:
    """Success rate per task and the steps-to-success histogram."""
    csv_path = Path(csv_path)
    per_task = report.per_task
    labels = list(per_task)
    rates = [s / n for n, s in per_task.values()]
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(labels) + 1.5))
    ax.barh(labels[::-1], rates[::-1], color="#4c72b0")
    ax.set_xlim(0, 1)
    ax.set_xlabel("success rate")
    rate = report.overall_success_rate
    ax.set_title(f"{report.setting} setting: {rate:.1%} overall" if rate is not None
                 else f"{report.setting} setting")
    out = [_save(fig, csv_path.with_name(f"{csv_path.stem}_success.png"))]

    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = report.success_steps
    if steps:
        ax.hist(steps, bins=range(0, max(steps) + 10, 10), color="#55a868", edgecolor="white")
    ax.axvline(125, color="gray", linestyle="--", linewidth=1)
    ax.set_xlabel("steps to success")
    ax.set_ylabel("episodes")
    out.append(_save(fig, csv_path.with_name(f"{csv_path.stem}_steps.png")))
    return out


def bench_figure(report, csv_path) -> Path:
    csv_path = Path(csv_path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist([t / 1000.0 for t in report.latencies_us], bins=30, color="#8172b2")
    ax.axvline(report.median_us / 1000.0, color="black", linewidth=1,
               label=f"median {report.median_us / 1000.0:.2f} ms")
    ax.set_xlabel("search latency (ms)")
    ax.set_ylabel("queries")
    ax.set_title(f"{report.pool_size} trajectories, {report.frames_scanned} frames scanned")
    ax.legend()
    return _save(fig, csv_path.with_name(f"{csv_path.stem}_latency.png"))


def cluster_figure(report, csv_path) -> Path:
    """Instructions in the first two principal components, coloured by cluster."""
    csv_path = Path(csv_path)
    fig, ax = plt.subplots(figsize=(6, 5))
    xy = report.projection
    ax.scatter(xy[:, 0], xy[:, 1], c=report.predicted, cmap="tab20", s=18)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.set_title(f"k={report.k}  ARI {report.ari:.3f}  NMI {report.nmi:.3f}")
    return _save(fig, csv_path.with_name(f"{csv_path.stem}_pca.png"))
