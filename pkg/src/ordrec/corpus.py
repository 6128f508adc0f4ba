"""Order/view ingestion, per-user ordering, vocabularies and training windows."""

from __future__ import annotations

import hashlib
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ordrec.errors import DataError

log = logging.getLogger(__name__)

PAD = 0


@dataclass(frozen=True)
class OrderEvent:
    user_id: str
    timestamp: int
    item_id: int


@dataclass(frozen=True)
class PurchaseSequence:
    user_id: str
    items: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class TrainingWindow:
    inputs: tuple[int, ...]
    label: int
    source_user: str
    window_index: int


@dataclass(frozen=True)
class CorpusConfig:
    seq_len: int = 12
    cutoff_time: int | None = None
    tie_break_seed: int = 0

    def __post_init__(self):
        if self.seq_len < 2:
            raise DataError(f"seq_len must be >= 2, got {self.seq_len}")

    @property
    def n_inputs(self) -> int:
        return self.seq_len - 1


@dataclass
class Vocabulary:
    """Full item set and output (label) item set, each densely indexed in
    ascending item_id order."""

    full_items: np.ndarray
    output_items: np.ndarray
    max_item_id: int
    _full_index: dict[int, int] = field(init=False, repr=False)
    _output_index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.full_items = np.asarray(self.full_items, dtype=np.int64)
        self.output_items = np.asarray(self.output_items, dtype=np.int64)
        if np.any(np.diff(self.full_items) <= 0) or np.any(np.diff(self.output_items) <= 0):
            raise DataError("vocabulary ids must be strictly ascending")
        if len(self.full_items) and self.full_items[0] < 1:
            raise DataError("vocabulary contains reserved padding id 0")
        self._full_index = {int(i): k for k, i in enumerate(self.full_items)}
        self._output_index = {int(i): k for k, i in enumerate(self.output_items)}
        missing = [int(i) for i in self.output_items if int(i) not in self._full_index]
        if missing:
            raise DataError(f"output items not in full vocabulary: {missing[:5]}")
        if len(self.full_items) and self.max_item_id < int(self.full_items[-1]):
            raise DataError("max_item_id is smaller than the largest item id")

    @property
    def n_items(self) -> int:
        return len(self.full_items)

    @property
    def n_outputs(self) -> int:
        return len(self.output_items)

    def __contains__(self, item_id: int) -> bool:
        return int(item_id) in self._full_index

    def is_output(self, item_id: int) -> bool:
        return int(item_id) in self._output_index

    def full_index(self, item_id: int) -> int:
        try:
            return self._full_index[int(item_id)]
        except KeyError:
            raise DataError(f"item {item_id} not in vocabulary") from None

    def output_index(self, item_id: int) -> int:
        try:
            return self._output_index[int(item_id)]
        except KeyError:
            raise DataError(f"item {item_id} not in output vocabulary") from None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (
            self.max_item_id == other.max_item_id
            and np.array_equal(self.full_items, other.full_items)
            and np.array_equal(self.output_items, other.output_items)
        )


def parse_orders(path: str | Path, cutoff: int | None = None) -> list[OrderEvent]:
    """Read ``user<TAB>timestamp_ms<TAB>item_id`` records.

    Lines starting with ``#`` and blank lines are skipped. Events later than
    `cutoff` are dropped; the rest keep file order.
    """
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            user, ts, item = parts
            if not user:
                raise DataError(f"{path}: line {lineno}: empty user_id")
            try:
                ts_val = int(ts)
                item_val = int(item)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: timestamp and item_id must be integers") from None
            if item_val == PAD:
                raise DataError(f"{path}: line {lineno}: item_id 0 is the reserved padding id")
            if item_val < 0:
                raise DataError(f"{path}: line {lineno}: negative item_id {item_val}")
            if cutoff is not None and ts_val > cutoff:
                continue
            events.append(OrderEvent(user, ts_val, item_val))
    log.info("parsed %d events from %s", len(events), path)
    return events


def write_events(path: str | Path, events: Iterable[OrderEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# user_id\ttimestamp_ms\titem_id\n")
        for e in events:
            fh.write(f"{e.user_id}\t{e.timestamp}\t{e.item_id}\n")


def _tie_rank(seed: int, user_id: str, item_id: int, occurrence: int) -> int:
    key = f"{seed}\x1f{user_id}\x1f{item_id}\x1f{occurrence}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def group_ordered(events: Sequence[OrderEvent], cfg: CorpusConfig = CorpusConfig()) -> list[PurchaseSequence]:
    """Group events per user and order them by time.

    Events sharing a timestamp are ordered by a keyed hash of
    (seed, user, item, occurrence), so the result is reproducible for a
    fixed seed and independent of the input order. Identical events are
    interchangeable, so their occurrence counter is taken after a canonical
    sort. Output is sorted by user_id.
    """
    if not events:
        raise DataError("no events to group")
    per_user: dict[str, list[OrderEvent]] = {}
    for e in events:
        if cfg.cutoff_time is not None and e.timestamp > cfg.cutoff_time:
            continue
        per_user.setdefault(e.user_id, []).append(e)

    out = []
    for user in sorted(per_user):
        evs = sorted(per_user[user], key=lambda e: (e.timestamp, e.item_id))
        seen: Counter = Counter()
        keyed = []
        for e in evs:
            occ = seen[(e.timestamp, e.item_id)]
            seen[(e.timestamp, e.item_id)] += 1
            keyed.append((e.timestamp, _tie_rank(cfg.tie_break_seed, user, e.item_id, occ), e.item_id, occ))
        keyed.sort()
        out.append(PurchaseSequence(user, tuple(k[2] for k in keyed)))
    return out


def filter_min_length(seqs: Sequence[PurchaseSequence], min_length: int = 2) -> list[PurchaseSequence]:
    return [s for s in seqs if len(s) >= min_length]


def build_vocab(seqs: Sequence[PurchaseSequence]) -> Vocabulary:
    """Full vocabulary = every item seen; output vocabulary = every item seen
    at a non-first position of some sequence (the set of possible labels)."""
    if not seqs:
        raise DataError("cannot build a vocabulary from zero sequences")
    full: set[int] = set()
    outputs: set[int] = set()
    for s in seqs:
        full.update(s.items)
        outputs.update(s.items[1:])
    if not outputs:
        raise DataError("no trainable labels")
    full_arr = np.array(sorted(full), dtype=np.int64)
    return Vocabulary(full_arr, np.array(sorted(outputs), dtype=np.int64), int(full_arr[-1]))


def window_count(m_u: int, seq_len: int = 12) -> int:
    return max(1, m_u - seq_len + 1)


def windowize(seq: PurchaseSequence, cfg: CorpusConfig, vocab: Vocabulary | None = None) -> list[TrainingWindow]:
    """Cut a sequence into fixed-length windows of ``seq_len - 1`` inputs plus a label.

    Long sequences slide a window one step at a time; short ones produce a
    single window aligned to the last purchase with zero padding in front.
    Windows whose label is not an output item of `vocab` are dropped.
    """
    items = seq.items
    m = len(items)
    L = cfg.seq_len
    if m < 2:
        raise DataError(f"sequence for user {seq.user_id!r} has length {m}; need >= 2")
    if m >= L:
        raw = [(items[k:k + L - 1], items[k + L - 1]) for k in range(m - L + 1)]
    else:
        raw = [((PAD,) * (L - m) + items[:-1], items[-1])]
    windows = []
    for k, (inputs, label) in enumerate(raw):
        if vocab is not None and not vocab.is_output(label):
            continue
        windows.append(TrainingWindow(tuple(inputs), label, seq.user_id, k))
    return windows


def windowize_all(
    seqs: Sequence[PurchaseSequence], cfg: CorpusConfig, vocab: Vocabulary | None = None
) -> tuple[list[TrainingWindow], int]:
    """Windowize every sequence; returns (windows, dropped label count)."""
    windows: list[TrainingWindow] = []
    dropped = 0
    for s in seqs:
        ws = windowize(s, cfg, vocab)
        dropped += window_count(len(s), cfg.seq_len) - len(ws)
        windows.extend(ws)
    if dropped:
        log.warning("dropped %d windows whose label is outside the output vocabulary", dropped)
    return windows, dropped


def length_stats(seqs: Sequence[PurchaseSequence]) -> dict[str, float]:
    """Mean and median sequence length, the statistics used to pick seq_len."""
    lengths = np.array([len(s) for s in seqs], dtype=np.float64)
    if not len(lengths):
        return {"n": 0, "mean": math.nan, "median": math.nan}
    return {"n": int(len(lengths)), "mean": float(lengths.mean()), "median": float(np.median(lengths))}
