"""Figures written next to the delimited train/evaluate outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "legend.fontsize": 9,
    "svg.hashsalt": "ordrec",
}


def save_training_curves(report, path) -> None:
    epochs = np.arange(1, len(report.train_loss) + 1)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(epochs, report.train_loss, marker="o", label="train")
        if report.val_loss:
            ax.plot(epochs, report.val_loss, marker="s", label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)


def save_rank_figure(ranks, n_outputs: int, path) -> None:
    """Histogram of true-item ranks (log x) and the cumulative hit curve
    against the uniform-random expectation."""
    ranks = np.asarray(ranks)
    with plt.rc_context(RC):
        fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        bins = np.unique(np.geomspace(1, n_outputs + 1, 40).astype(int))
        left.hist(ranks, bins=bins, color="tab:blue")
        left.set_xscale("log")
        left.axvline(n_outputs / 2, color="tab:red", ls="--", label="random mean rank")
        left.set_xlabel("rank of true next item")
        left.set_ylabel("cases")
        left.legend()
        k = np.arange(1, n_outputs + 1)
        hits = np.searchsorted(np.sort(ranks), k, side="right") / len(ranks)
        right.plot(k, hits, label="model")
        right.plot(k, k / n_outputs, ls="--", color="gray", label="random")
        right.set_xscale("log")
        right.set_xlabel("k")
        right.set_ylabel("hit@k")
        right.legend()
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
