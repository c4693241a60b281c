"""Figure rendering for benchmark reports.

Turns evaluation summaries into PNG files: grouped per-manipulation
recall bars and the posting-lag histogram. Rendering is isolated here so
the evaluation code itself stays free of plotting concerns.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .eval_harness import EvalReport, LagBucket

BAR_KS = (3, 10)


def save_recall_bars(report: EvalReport, path: str) -> None:
    """Grouped bar chart: recall@3 and recall@10 per manipulation."""
    manips = sorted(report.per_manipulation)
    ks = [k for k in BAR_KS if k in report.recall]
    if not ks:
        ks = sorted(report.recall)[:2]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(manips) + 2.0), 4.0))
    width = 0.8 / max(len(ks), 1)
    for i, k in enumerate(ks):
        xs = [m + i * width for m in range(len(manips))]
        ys = [report.per_manipulation[m].recall.get(k, 0.0) for m in manips]
        ax.bar(xs, ys, width=width, label=f"recall@{k}")
    ax.set_xticks([m + width * (len(ks) - 1) / 2 for m in range(len(manips))])
    ax.set_xticklabels(manips, rotation=60, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("recall")
    ax.set_title(f"retrieval recall per manipulation ({report.mode} mode)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_lag_histogram(buckets: list[LagBucket], bucket_weeks: int, path: str) -> None:
    """Bar chart of repost share per posting-lag bucket."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    if buckets:
        xs = [b.start_week for b in buckets]
        ys = [b.percentage for b in buckets]
        ax.bar(xs, ys, width=bucket_weeks * 0.9, align="edge")
    ax.set_xlabel("lag (weeks, query posted after source when positive)")
    ax.set_ylabel("% of matched pairs")
    ax.set_title(f"posting lag distribution ({bucket_weeks}-week buckets)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
