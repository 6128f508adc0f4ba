"""Offline ranking evaluation of the true next item."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ordrec import lstm
from ordrec.artifact import ModelArtifact
from ordrec.corpus import TrainingWindow
from ordrec.errors import DataError
from ordrec.trainer import encode_windows

EXACT_MAX_N = 20


def rank_of_true(probs, true_index: int) -> int:
    """1-based rank under (probability desc, index asc)."""
    probs = np.asarray(probs)
    p = probs[true_index]
    return int(1 + np.count_nonzero(probs > p) + np.count_nonzero(probs[:true_index] == p))


def ranks_of_true(probs: np.ndarray, true_index: np.ndarray) -> np.ndarray:
    """Row-wise `rank_of_true` for a (B, n) probability matrix."""
    rows = np.arange(len(true_index))
    p = probs[rows, true_index][:, None]
    before = np.arange(probs.shape[1])[None, :] < true_index[:, None]
    return 1 + (probs > p).sum(axis=1) + ((probs == p) & before).sum(axis=1)


def ndcg_at_k(ranked_items: Sequence[int], relevant_item: int, k: int) -> float:
    """Binary-relevance NDCG with a single relevant item (ideal DCG = 1)."""
    if k < 1:
        raise DataError("k must be >= 1")
    for pos, item in enumerate(list(ranked_items)[:k], start=1):
        if item == relevant_item:
            return 1.0 / math.log2(1 + pos)
    return 0.0


def ndcg_from_rank(rank: int, k: int) -> float:
    return 1.0 / math.log2(1 + rank) if rank <= k else 0.0


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    pvalue: float
    n: int
    method: str


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_upper_tail(doubled_ranks: np.ndarray, observed2: int) -> float:
    """P(sum of randomly signed-positive doubled ranks >= observed2), counting
    all 2**n sign assignments by dynamic programming over attainable sums."""
    total = int(doubled_ranks.sum())
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks.astype(int):
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    return sum(counts[observed2:]) / 2 ** len(doubled_ranks)


def wilcoxon_signed_rank(model_ranks, baseline_ranks, exact_max_n: int = EXACT_MAX_N) -> WilcoxonResult:
    """One-sided paired test that model ranks are smaller than baseline ranks.

    Differences are ``baseline - model``; zeros are dropped and tied |d| get
    average ranks. W is the sum of ranks of positive differences and the
    p-value is P(W' >= W) under random signs: exact when the number of
    nonzero pairs is at most `exact_max_n`, otherwise a normal approximation
    with tie and continuity corrections.
    """
    a = np.asarray(model_ranks, dtype=np.float64)
    b = np.asarray(baseline_ranks, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("model and baseline ranks must be equal-length 1-D sequences")
    d = b - a
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DataError("degenerate: all paired differences are zero")
    r = _average_ranks(np.abs(d))
    w = float(r[d > 0].sum())
    if n <= exact_max_n:
        return WilcoxonResult(w, _exact_upper_tail(np.rint(2 * r), int(round(2 * w))), n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts ** 3) - tie_counts).sum()) / 48.0
    z = (w - mean - 0.5) / math.sqrt(var)
    return WilcoxonResult(w, 0.5 * math.erfc(z / math.sqrt(2.0)), n, "normal")


@dataclass
class EvalReport:
    n_cases: int
    n_outputs: int
    mean_rank: float
    median_rank: float
    mean_rank_percentile: float
    random_baseline_rank: float
    hit: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    wilcoxon_statistic: float = float("nan")
    wilcoxon_p: float = float("nan")
    wilcoxon_method: str = ""
    ranks: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "n_cases": self.n_cases,
            "n_outputs": self.n_outputs,
            "mean_rank": self.mean_rank,
            "median_rank": self.median_rank,
            "mean_rank_percentile": self.mean_rank_percentile,
            "random_baseline_rank": self.random_baseline_rank,
        }
        out.update({f"hit@{k}": v for k, v in sorted(self.hit.items())})
        out.update({f"ndcg@{k}": v for k, v in sorted(self.ndcg.items())})
        out.update({"wilcoxon_statistic": self.wilcoxon_statistic, "wilcoxon_p": self.wilcoxon_p,
                    "wilcoxon_method": self.wilcoxon_method})
        return out


def predict_window_probs(art: ModelArtifact, windows: Sequence[TrainingWindow], batch_size: int = 256):
    """Yield (probs, label indices) batches for windows."""
    rows, labels = encode_windows(windows, art.vocab)
    table = art.input_table()
    for s in range(0, len(rows), batch_size):
        probs, _ = lstm.forward(art.params, table[rows[s:s + batch_size]])
        yield probs, labels[s:s + batch_size]


def random_ranks(n_cases: int, n_outputs: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(1, n_outputs + 1, size=n_cases)


def summarize(ranks: np.ndarray, n_outputs: int, k_list: Sequence[int] = (1, 10, 100), seed: int = 0,
              exact_max_n: int = EXACT_MAX_N) -> EvalReport:
    ranks = np.asarray(ranks, dtype=np.int64)
    if not len(ranks):
        raise DataError("empty test set")
    ks = sorted(set(int(k) for k in k_list))
    if any(k < 1 for k in ks):
        raise DataError("k values must be >= 1")
    discount = 1.0 / np.log2(1.0 + ranks)
    report = EvalReport(
        n_cases=int(len(ranks)),
        n_outputs=int(n_outputs),
        mean_rank=float(ranks.mean()),
        median_rank=float(np.median(ranks)),
        mean_rank_percentile=float(ranks.mean() / n_outputs),
        random_baseline_rank=n_outputs / 2.0,
        hit={k: float(np.mean(ranks <= k)) for k in ks},
        ndcg={k: float(np.mean(np.where(ranks <= k, discount, 0.0))) for k in ks},
        ranks=ranks,
    )
    try:
        wx = wilcoxon_signed_rank(ranks, random_ranks(len(ranks), n_outputs, seed), exact_max_n)
        report.wilcoxon_statistic, report.wilcoxon_p, report.wilcoxon_method = wx.statistic, wx.pvalue, wx.method
    except DataError:
        report.wilcoxon_method = "degenerate"
    return report


def evaluate(art: ModelArtifact, test_windows: Sequence[TrainingWindow], k_list: Sequence[int] = (1, 10, 100),
             seed: int = 0, exact_max_n: int = EXACT_MAX_N) -> EvalReport:
    """Rank the true label of every window and aggregate the statistics.

    The paired test compares model ranks against seeded uniform random ranks
    in 1..|I'|; ``random_baseline_rank`` is the closed-form |I'|/2.
    """
    if not test_windows:
        raise DataError("empty test set")
    ranks = np.concatenate([ranks_of_true(p, lab) for p, lab in predict_window_probs(art, test_windows)])
    return summarize(ranks, art.vocab.n_outputs, k_list, seed, exact_max_n)
