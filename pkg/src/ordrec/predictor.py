"""Next-order recommendation: personalized history, single seed item,
multi-step rollout, and sharded batch scoring across worker processes."""

from __future__ import annotations

import logging
import multiprocessing as mp
import os
import shutil
import tempfile
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ordrec import artifact as store
from ordrec import lstm
from ordrec.artifact import ModelArtifact
from ordrec.corpus import PAD
from ordrec.errors import DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionRequest:
    row_id: str
    history: tuple[int, ...]


@dataclass(frozen=True)
class PredictionResult:
    row_id: str
    top_k: tuple[tuple[int, float], ...]

    def items(self) -> list[int]:
        return [i for i, _ in self.top_k]


def top_k_indices(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, ties broken by ascending index.

    Uses a partial partition to find the k-th value, then resolves the
    boundary tie set exactly, so no full sort of the vocabulary is needed.
    """
    n = len(probs)
    k = min(k, n)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k < n:
        kth = probs[np.argpartition(-probs, k - 1)[:k]].min()
        cand = np.flatnonzero(probs >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, -probs[cand]))
    return cand[order[:k]]


def encode_history(art: ModelArtifact, history: Sequence[int]) -> np.ndarray:
    """Feature matrix for a history: most recent last, truncated to the last
    ``seq_len_in`` items and left-padded with zero rows."""
    history = [int(i) for i in history]
    if not history:
        raise DataError("empty history")
    T = art.config.seq_len_in
    history = history[-T:]
    x = np.zeros((T, art.config.feature_dim), dtype=np.float32)
    for j, item in enumerate(history, start=T - len(history)):
        if item == PAD:
            raise DataError("item 0 is the reserved padding id")
        x[j] = art.features[art.vocab.full_index(item)]
    return x


def _result(art: ModelArtifact, row_id: str, probs: np.ndarray, k: int) -> PredictionResult:
    idx = top_k_indices(probs, k)
    items = art.vocab.output_items[idx]
    return PredictionResult(row_id, tuple((int(i), float(probs[j])) for i, j in zip(items, idx)))


def predict_proba(art: ModelArtifact, history: Sequence[int]) -> np.ndarray:
    probs, _ = lstm.forward(art.params, encode_history(art, history))
    return probs


def predict_next(art: ModelArtifact, history: Sequence[int], k: int = 100, row_id: str = "") -> PredictionResult:
    return _result(art, row_id, predict_proba(art, history), k)


def predict_from_seed(art: ModelArtifact, seed_item: int, k: int = 100, row_id: str = "") -> PredictionResult:
    if int(seed_item) == PAD:
        raise DataError("seed item 0 is the reserved padding id")
    return predict_next(art, [seed_item], k, row_id)


def rollout(art: ModelArtifact, history: Sequence[int], horizon: int, k_per_step: int = 10) -> list[PredictionResult]:
    """Predict several orders ahead by appending each step's top-1 item to the
    history (the window slides, dropping the oldest item)."""
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    hist = [int(i) for i in history][-art.config.seq_len_in:]
    out = []
    for step in range(horizon):
        res = predict_next(art, hist, max(1, k_per_step), row_id=str(step + 1))
        out.append(res)
        hist = (hist + [res.top_k[0][0]])[-art.config.seq_len_in:]
    return out


def format_result(res: PredictionResult) -> str:
    return f"{res.row_id}\t" + ",".join(f"{item}:{p:.6f}" for item, p in res.top_k)


def parse_requests(path: str | Path) -> list[PredictionRequest]:
    """``row_id<TAB>comma-separated history`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            try:
                row_id, hist = line.split("\t")
                items = tuple(int(v) for v in hist.split(",") if v.strip())
            except ValueError:
                raise DataError(f"{path}: line {lineno}: expected row_id<TAB>item,item,...") from None
            if not items:
                raise DataError(f"{path}: line {lineno}: empty history")
            out.append(PredictionRequest(row_id, items))
    return out


# --- sharded scoring -------------------------------------------------------

# Per-process model slot, filled on first use inside a worker.
_MODEL: ModelArtifact | None = None
_LOADS = 0


def _get_model(artifact_path: str, scratch_dir: str) -> ModelArtifact:
    global _MODEL, _LOADS
    if _MODEL is None:
        local = os.path.join(scratch_dir, f"model-{uuid.uuid4().hex}.ordrec")
        shutil.copyfile(artifact_path, local)
        try:
            _MODEL = store.load(local)
        finally:
            os.remove(local)
        _LOADS += 1
    return _MODEL


def _score_partition(artifact_path, scratch_dir, requests, k):
    results = []
    for req in requests:
        art = _get_model(artifact_path, scratch_dir)
        results.append(predict_next(art, req.history, k, req.row_id))
    return results


def _worker(conn, artifact_path, scratch_dir, requests, k):
    global _MODEL, _LOADS
    _MODEL, _LOADS = None, 0
    try:
        results = _score_partition(artifact_path, scratch_dir, requests, k)
        conn.send(("ok", results, _LOADS))
    except BaseException as exc:  # reported to the parent, which fails the batch
        conn.send(("error", f"{type(exc).__name__}: {exc}", _LOADS))
    finally:
        conn.close()


def partition(n: int, n_workers: int) -> list[tuple[int, int]]:
    """Contiguous [start, stop) chunks in input order, sizes differing by at most one."""
    bounds = np.linspace(0, n, n_workers + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


@dataclass
class ScoreStats:
    loads_per_worker: list[int] = field(default_factory=list)
    rows_per_worker: list[int] = field(default_factory=list)


def score_batch_with_stats(artifact_path, requests: Sequence[PredictionRequest], n_workers: int = 1,
                           k: int = 100, scratch_dir=None) -> tuple[list[PredictionResult], ScoreStats]:
    """Score requests across `n_workers` processes.

    The artifact is verified up front, so a missing or corrupt file fails
    before any scoring. Each worker with a nonempty partition copies the
    artifact to a uniquely named scratch file and loads it once, lazily, on
    its first row. Results come back in input order and match a single
    worker exactly; any worker failure fails the whole batch.
    """
    if n_workers < 1:
        raise DataError("n_workers must be >= 1")
    artifact_path = str(artifact_path)
    store.read_manifest(artifact_path)
    stats = ScoreStats()
    requests = list(requests)
    if not requests:
        return [], stats

    own_scratch = scratch_dir is None
    scratch = tempfile.mkdtemp(prefix="ordrec-scratch-") if own_scratch else str(scratch_dir)
    try:
        chunks = [(a, b) for a, b in partition(len(requests), n_workers) if b > a]
        ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods() else "spawn")
        procs = []
        for a, b in chunks:
            parent, child = ctx.Pipe(duplex=False)
            p = ctx.Process(target=_worker, args=(child, artifact_path, scratch, requests[a:b], k), daemon=True)
            p.start()
            child.close()
            procs.append((p, parent))
        outcomes = []
        for p, conn in procs:
            try:
                outcomes.append(conn.recv())
            except EOFError:
                outcomes.append(("error", f"worker exited with code {p.exitcode}", 0))
            p.join()
        failures = [msg for status, msg, _ in outcomes if status != "ok"]
        if failures:
            raise DataError(f"batch scoring failed: {failures[0]}")
        results = []
        for (a, b), (_, part, loads) in zip(chunks, outcomes):
            results.extend(part)
            stats.loads_per_worker.append(loads)
            stats.rows_per_worker.append(b - a)
        return results, stats
    finally:
        if own_scratch:
            shutil.rmtree(scratch, ignore_errors=True)


def score_batch(artifact_path, requests: Sequence[PredictionRequest], n_workers: int = 1, k: int = 100,
                scratch_dir=None) -> list[PredictionResult]:
    return score_batch_with_stats(artifact_path, requests, n_workers, k, scratch_dir)[0]
