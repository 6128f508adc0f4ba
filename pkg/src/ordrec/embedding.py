"""Skip-gram with negative sampling over view sequences, and the per-item
feature vector fed to the sequence model.

Feature layout for an item (length ``2 + dim``):

    [0]      1.0 if the item has an embedding, else 0.0
    [1]      item_id / max_item_id
    [2:]     the item's input vector, or zeros when absent

The padding id 0 maps to an all-zero row.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numba
import numpy as np

from ordrec.corpus import PAD, PurchaseSequence, TrainingWindow, Vocabulary
from ordrec.errors import DataError

log = logging.getLogger(__name__)

MIN_LR_FRACTION = 1e-4


@dataclass(frozen=True)
class Word2VecConfig:
    window: int = 5
    dim: int = 100
    negatives: int = 5
    epochs: int = 5
    initial_lr: float = 0.025
    min_count: int = 1
    seed: int = 0
    power: float = 0.75

    def __post_init__(self):
        if self.window < 1 or self.dim < 1 or self.negatives < 1:
            raise DataError("window, dim and negatives must all be >= 1")
        if self.epochs < 0 or self.min_count < 1:
            raise DataError("epochs must be >= 0 and min_count >= 1")


class Word2VecModel:
    def __init__(self, items, input_vectors, context_vectors, config: Word2VecConfig):
        self.items = np.asarray(items, dtype=np.int64)
        self.input_vectors = np.asarray(input_vectors, dtype=np.float32)
        self.context_vectors = np.asarray(context_vectors, dtype=np.float32)
        self.config = config
        self.index = {int(i): k for k, i in enumerate(self.items)}
        n, d = len(self.items), config.dim
        if self.input_vectors.shape != (n, d) or self.context_vectors.shape != (n, d):
            raise DataError(f"embedding matrices must be {(n, d)}")

    @property
    def dim(self) -> int:
        return self.config.dim

    def __contains__(self, item_id) -> bool:
        return int(item_id) in self.index

    def __len__(self) -> int:
        return len(self.items)

    def get(self, item_id):
        """Input vector of `item_id`, or None if the item has no embedding."""
        k = self.index.get(int(item_id))
        return None if k is None else self.input_vectors[k]

    def config_dict(self) -> dict:
        return asdict(self.config)


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DataError("undefined cosine for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


class NegativeSampler:
    """Draws item indices with probability proportional to count ** power."""

    def __init__(self, counts, power: float = 0.75):
        weights = np.asarray(counts, dtype=np.float64) ** power
        self.probs = weights / weights.sum()
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.searchsorted(self._cdf, rng.random(n), side="right").astype(np.int32)


def sgns_pair_loss_grad(v, u_ctx, u_negs):
    """Loss and gradients for one (center, context) pair with negatives.

    loss = -log s(u_ctx . v) - sum_k log s(-u_neg_k . v)
    Returns (loss, dv, du_ctx, du_negs).
    """
    v = np.asarray(v, dtype=np.float64)
    u_ctx = np.asarray(u_ctx, dtype=np.float64)
    u_negs = np.atleast_2d(np.asarray(u_negs, dtype=np.float64))
    s_pos = _sigmoid(u_ctx @ v)
    s_neg = _sigmoid(u_negs @ v)
    loss = -np.log(s_pos) - np.sum(np.log1p(-s_neg))
    dv = -(1.0 - s_pos) * u_ctx + s_neg @ u_negs
    du_ctx = -(1.0 - s_pos) * v
    du_negs = s_neg[:, None] * v[None, :]
    return float(loss), dv, du_ctx, du_negs


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


@numba.njit(cache=True)
def _sgns_pair_update(syn0, syn1, w, c, negs, lr):
    # In-place SGD step for one pair; negatives equal to the context are skipped.
    dim = syn0.shape[1]
    neu1e = np.zeros(dim, dtype=syn0.dtype)
    for k in range(-1, negs.shape[0]):
        if k < 0:
            target = c
            label = 1.0
        else:
            target = negs[k]
            if target == c:
                continue
            label = 0.0
        f = 0.0
        for d in range(dim):
            f += syn0[w, d] * syn1[target, d]
        sig = 0.5 * (1.0 + math.tanh(0.5 * f))
        g = (label - sig) * lr
        for d in range(dim):
            neu1e[d] += g * syn1[target, d]
            syn1[target, d] += g * syn0[w, d]
    for d in range(dim):
        syn0[w, d] += neu1e[d]


@numba.njit(cache=True)
def _sgns_epoch(tokens, offsets, window, negs, n_neg, syn0, syn1, lr0, done, total):
    p = 0
    for s in range(offsets.shape[0] - 1):
        lo = offsets[s]
        hi = offsets[s + 1]
        for i in range(lo, hi):
            w = tokens[i]
            for j in range(max(lo, i - window), min(hi, i + window + 1)):
                if j == i:
                    continue
                frac = 1.0 - (done + p) / total
                lr = lr0 * max(frac, 1e-4)
                _sgns_pair_update(syn0, syn1, w, tokens[j], negs[p * n_neg:(p + 1) * n_neg], lr)
                p += 1
    return p


def _pairs_per_epoch(offsets: np.ndarray, window: int) -> int:
    total = 0
    for s in range(len(offsets) - 1):
        n = int(offsets[s + 1] - offsets[s])
        for i in range(n):
            total += min(n - 1, i + window) - max(0, i - window)
    return total


def train_word2vec(view_seqs: Sequence[PurchaseSequence], cfg: Word2VecConfig = Word2VecConfig()) -> Word2VecModel:
    """Train skip-gram embeddings with negative sampling.

    Single-threaded and fully determined by ``cfg.seed``. Every center/context
    pair within ``cfg.window`` positions is visited once per epoch; the
    learning rate decays linearly over the total pair count.
    """
    counts = Counter(i for s in view_seqs for i in s.items)
    kept = sorted(i for i, c in counts.items() if c >= cfg.min_count)
    index = {item: k for k, item in enumerate(kept)}
    seqs = [[index[i] for i in s.items if i in index] for s in view_seqs]
    seqs = [s for s in seqs if len(s) >= 2]
    if not seqs:
        raise DataError("no training pairs")

    tokens = np.fromiter((t for s in seqs for t in s), dtype=np.int64)
    offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(s) for s in seqs])
    n, dim = len(kept), cfg.dim

    rng = np.random.default_rng(cfg.seed)
    syn0 = ((rng.random((n, dim)) - 0.5) / dim).astype(np.float32)
    syn1 = np.zeros((n, dim), dtype=np.float32)

    sampler = NegativeSampler([counts[i] for i in kept], cfg.power)
    per_epoch = _pairs_per_epoch(offsets, cfg.window)
    total = float(max(1, per_epoch * cfg.epochs))
    done = 0
    for epoch in range(cfg.epochs):
        neg_rng = np.random.default_rng([cfg.seed, epoch + 1])
        negs = sampler.draw(per_epoch * cfg.negatives, neg_rng)
        done += _sgns_epoch(tokens, offsets, cfg.window, negs, cfg.negatives, syn0, syn1,
                            np.float32(cfg.initial_lr), float(done), total)
        log.info("word2vec epoch %d/%d: %d pairs", epoch + 1, cfg.epochs, per_epoch)
    if not (np.all(np.isfinite(syn0)) and np.all(np.isfinite(syn1))):
        raise DataError("word2vec training produced non-finite vectors")
    return Word2VecModel(np.array(kept, dtype=np.int64), syn0, syn1, cfg)


def feature_dim(w2v_dim: int) -> int:
    return 2 + w2v_dim


def build_feature(item_id: int, w2v: Word2VecModel, vocab: Vocabulary) -> np.ndarray:
    out = np.zeros(feature_dim(w2v.dim), dtype=np.float32)
    if int(item_id) == PAD:
        return out
    if item_id not in vocab:
        raise DataError(f"item {item_id} not in vocabulary")
    vec = w2v.get(item_id)
    out[1] = np.float32(int(item_id) / vocab.max_item_id)
    if vec is not None:
        out[0] = 1.0
        out[2:] = vec
    return out


def feature_table(vocab: Vocabulary, w2v: Word2VecModel) -> np.ndarray:
    """Feature rows for every vocabulary item, in full-index order."""
    table = np.zeros((vocab.n_items, feature_dim(w2v.dim)), dtype=np.float32)
    for k, item in enumerate(vocab.full_items):
        table[k] = build_feature(int(item), w2v, vocab)
    n_missing = int(vocab.n_items - table[:, 0].sum())
    if n_missing:
        log.info("%d of %d items have no embedding", n_missing, vocab.n_items)
    return table


def featurize_window(w: TrainingWindow, w2v: Word2VecModel, vocab: Vocabulary) -> np.ndarray:
    return np.stack([build_feature(i, w2v, vocab) for i in w.inputs])
