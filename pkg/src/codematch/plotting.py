"""Figure rendering for training curves and evaluation rank distributions."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def plot_history(records, path) -> None:
    """Dev MAP / nDCG per epoch, with the training loss on a twin axis."""
    records = list(records)
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [r.map for r in records], color="tab:blue", label="dev MAP")
    ax.plot(epochs, [r.ndcg for r in records], color="tab:green", label="dev nDCG")
    ax.set_xlabel("epoch")
    ax.set_ylabel("ranking metric")
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3)
    twin = ax.twinx()
    twin.plot(epochs, [r.loss for r in records], color="tab:red", linestyle="--", alpha=0.7, label="train loss")
    twin.set_ylabel("train loss")
    handles, labels = ax.get_legend_handles_labels()
    h2, l2 = twin.get_legend_handles_labels()
    ax.legend(handles + h2, labels + l2, loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_rank_histogram(report, path) -> None:
    """Histogram of the positive candidate's rank across pools."""
    ranks = [rank for (_qid, rank, _size) in report.per_query_ranks]
    top = max(size for (_qid, _rank, size) in report.per_query_ranks)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(ranks, bins=range(1, top + 2), color="tab:blue", edgecolor="white", align="left")
    ax.set_xlabel("rank of the positive")
    ax.set_ylabel("queries")
    ax.set_title(f"MAP {report.map:.4f}   nDCG {report.ndcg:.4f}", fontsize=10)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
