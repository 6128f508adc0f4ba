"""Mini-batch training of the sequence model over training windows."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ordrec import artifact as store
from ordrec import lstm
from ordrec.artifact import ModelArtifact
from ordrec.corpus import TrainingWindow, Vocabulary
from ordrec.embedding import Word2VecModel, feature_table
from ordrec.errors import DataError, DivergenceError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 10
    shuffle_seed: int = 0
    validation_fraction: float = 0.2
    checkpoint_every: int | None = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_batch_size: int = 512

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.epochs < 0:
            raise DataError("epochs must be >= 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise DataError("validation_fraction must lie in [0, 1)")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    initial_train_loss: float | None = None

    def rows(self) -> list[tuple[int, float, float, float]]:
        val = self.val_loss or [float("nan")] * len(self.train_loss)
        return [(e + 1, tl, vl, s) for e, (tl, vl, s) in enumerate(zip(self.train_loss, val, self.seconds))]

    def to_tsv(self) -> str:
        lines = ["epoch\ttrain_loss\tval_loss\tseconds"]
        lines += [f"{e}\t{tl:.6f}\t{vl:.6f}\t{s:.3f}" for e, tl, vl, s in self.rows()]
        return "\n".join(lines) + "\n"


def _user_draw(user: str, seed: int) -> float:
    digest = hashlib.blake2b(f"{seed}\x1f{user}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def split(windows: Sequence[TrainingWindow], validation_fraction: float, seed: int):
    """Seeded split by source user: the ``round(fraction * n_users)`` users with
    the smallest keyed-hash draws go to validation. Returns (train, validation)."""
    if not windows:
        raise DataError("cannot split an empty window set")
    users = sorted({w.source_user for w in windows})
    n_val = int(round(validation_fraction * len(users)))
    if validation_fraction > 0 and (n_val == 0 or n_val == len(users)):
        raise DataError(f"validation fraction {validation_fraction} over {len(users)} users leaves a side empty")
    held = set(sorted(users, key=lambda u: (_user_draw(u, seed), u))[:n_val])
    train = [w for w in windows if w.source_user not in held]
    val = [w for w in windows if w.source_user in held]
    return train, val


def _epoch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def batches(windows: Sequence[TrainingWindow], batch_size: int, epoch_seed: tuple[int, int] | int) -> Iterator[list]:
    """Shuffled batches covering every window once; the last batch may be short.

    `epoch_seed` is ``(shuffle_seed, epoch)`` or a single integer.
    """
    seed, epoch = epoch_seed if isinstance(epoch_seed, tuple) else (epoch_seed, 0)
    order = _epoch_order(len(windows), seed, epoch)
    for start in range(0, len(order), batch_size):
        yield [windows[i] for i in order[start:start + batch_size]]


def encode_windows(windows: Sequence[TrainingWindow], vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """(input rows into the padded feature table, label output indices)."""
    rows = np.array([[0 if i == 0 else vocab.full_index(i) + 1 for i in w.inputs] for w in windows],
                    dtype=np.int64).reshape(len(windows), -1)
    labels = np.array([vocab.output_index(w.label) for w in windows], dtype=np.int64)
    return rows, labels


def mean_loss(params, table: np.ndarray, rows: np.ndarray, labels: np.ndarray, batch_size: int = 512) -> float:
    if len(rows) == 0:
        return float("nan")
    total = 0.0
    for s in range(0, len(rows), batch_size):
        _, cache = lstm.forward(params, table[rows[s:s + batch_size]])
        total += lstm.cross_entropy(cache.logits, labels[s:s + batch_size]) * len(labels[s:s + batch_size])
    return total / len(rows)


def train(
    windows: Sequence[TrainingWindow],
    vocab: Vocabulary,
    w2v: Word2VecModel,
    model_cfg: lstm.ModelConfig,
    train_cfg: TrainConfig = TrainConfig(),
    checkpoint_path: str | Path | None = None,
) -> tuple[ModelArtifact, TrainReport]:
    if model_cfg.n_outputs != vocab.n_outputs:
        raise DataError(f"model n_outputs {model_cfg.n_outputs} != |output vocabulary| {vocab.n_outputs}")
    features = feature_table(vocab, w2v)
    if features.shape[1] != model_cfg.feature_dim:
        raise DataError(f"feature dim {features.shape[1]} != model feature_dim {model_cfg.feature_dim}")
    table = np.vstack([np.zeros((1, features.shape[1]), dtype=np.float32), features])

    if train_cfg.validation_fraction > 0:
        train_w, val_w = split(windows, train_cfg.validation_fraction, train_cfg.shuffle_seed)
    else:
        train_w, val_w = list(windows), []
    if not train_w and train_cfg.epochs > 0:
        raise DataError("no training windows")
    rows, labels = encode_windows(train_w, vocab)
    val_rows, val_labels = encode_windows(val_w, vocab)
    if rows.shape[1:] not in ((model_cfg.seq_len_in,), (0,)):
        raise DataError(f"windows have {rows.shape[1]} inputs, model expects {model_cfg.seq_len_in}")

    params = lstm.init_params(model_cfg)
    state = lstm.AdamState(lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps)
    report = TrainReport()
    log.info("training on %d windows (%d validation), %d outputs", len(train_w), len(val_w), vocab.n_outputs)

    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        order = _epoch_order(len(rows), train_cfg.shuffle_seed, epoch)
        total = 0.0
        for b, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            idx = order[start:start + train_cfg.batch_size]
            # divergence surfaces as a non-finite loss below, not as numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                _, cache = lstm.forward(params, table[rows[idx]])
                batch_loss = lstm.cross_entropy(cache.logits, labels[idx])
            if not np.isfinite(batch_loss):
                raise DivergenceError(f"diverged: non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            if report.initial_train_loss is None:
                report.initial_train_loss = batch_loss
            grads = lstm.backward(params, cache, labels[idx])
            try:
                lstm.adam_step(params, grads, state)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch + 1}, batch {b + 1}") from None
            total += batch_loss * len(idx)
        report.train_loss.append(total / len(rows))
        if len(val_rows):
            report.val_loss.append(mean_loss(params, table, val_rows, val_labels, train_cfg.eval_batch_size))
        report.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d: train %.4f val %s (%.1fs)", epoch + 1, report.train_loss[-1],
                 f"{report.val_loss[-1]:.4f}" if report.val_loss else "-", report.seconds[-1])
        if checkpoint_path and train_cfg.checkpoint_every and (epoch + 1) % train_cfg.checkpoint_every == 0:
            ckpt = _build_artifact(model_cfg, vocab, features, params, train_cfg, report, epoch + 1)
            store.save(ckpt, f"{checkpoint_path}.epoch{epoch + 1}")

    art = _build_artifact(model_cfg, vocab, features, params, train_cfg, report, train_cfg.epochs)
    return art, report


def _build_artifact(model_cfg, vocab, features, params, train_cfg, report, epochs_done) -> ModelArtifact:
    meta = {
        "epochs_completed": epochs_done,
        "train_config": asdict(train_cfg),
        "final_train_loss": report.train_loss[-1] if report.train_loss else None,
        "final_val_loss": report.val_loss[-1] if report.val_loss else None,
        "train_loss": list(report.train_loss),
        "val_loss": list(report.val_loss),
    }
    snapshot = {k: v.copy() for k, v in params.items()}
    return ModelArtifact(model_cfg, vocab, features, snapshot, meta)
