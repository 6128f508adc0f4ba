"""File formats: the binary tensor container (model artifacts, embeddings)
and the line-delimited text files for vocabularies, windows and sequences.

Container layout::

    b"ORDREC\\x00\\x01"                 8-byte magic
    uint64 LE                         manifest length in bytes
    manifest                          UTF-8 JSON, sorted keys, no whitespace
    tensor blocks                     raw little-endian, in manifest order
    sha256 digest (32 bytes)          over every preceding byte

Each manifest tensor entry records name, dtype (``<f4`` or ``<i4``), shape,
offset and nbytes; offsets count from the first tensor byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ordrec.corpus import PAD, PurchaseSequence, TrainingWindow, Vocabulary
from ordrec.embedding import Word2VecConfig, Word2VecModel
from ordrec.errors import DataError
from ordrec.lstm import PARAM_NAMES, ModelConfig

MAGIC = b"ORDREC\x00\x01"
FORMAT_VERSION = 1
DIGEST_SIZE = 32
_DTYPES = {"<f4": np.dtype("<f4"), "<i4": np.dtype("<i4")}


def write_container(path: str | Path, kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> str:
    """Write a container atomically; returns the hex checksum."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            data = np.ascontiguousarray(arr, dtype="<f4")
        elif arr.dtype.kind in "iu":
            if arr.size and (arr.min() < -2**31 or arr.max() >= 2**31):
                raise DataError(f"tensor {name} does not fit in int32")
            data = np.ascontiguousarray(arr, dtype="<i4")
        else:
            raise DataError(f"tensor {name} has unsupported dtype {arr.dtype}")
        raw = data.tobytes()
        entries.append({"name": name, "dtype": data.dtype.str, "shape": list(data.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta, "tensors": entries}
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(mbytes)) + mbytes + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(digest)
    os.replace(tmp, path)
    return digest.hex()


def read_manifest(path: str | Path, verify: bool = True) -> tuple[dict, bytes]:
    """Validate magic, checksum and version; returns (manifest, tensor bytes)."""
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"artifact not found: {path}") from None
    if len(blob) < len(MAGIC) + 8 + DIGEST_SIZE or not blob.startswith(MAGIC[:6]):
        raise DataError(f"{path}: not an ordrec container or truncated")
    body, digest = blob[:-DIGEST_SIZE], blob[-DIGEST_SIZE:]
    if verify and hashlib.sha256(body).digest() != digest:
        raise DataError(f"{path}: checksum mismatch (file corrupt or truncated)")
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: unsupported container version {blob[6:8].hex()}, expected {MAGIC[6:8].hex()}")
    (mlen,) = struct.unpack("<Q", body[8:16])
    try:
        manifest = json.loads(body[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable manifest: {exc}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: format version {manifest.get('format_version')} "
                        f"is not supported (this build reads version {FORMAT_VERSION})")
    manifest["checksum"] = digest.hex()
    return manifest, body[16 + mlen:]


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    manifest, data = read_manifest(path)
    tensors = {}
    for e in manifest["tensors"]:
        dt = _DTYPES.get(e["dtype"])
        if dt is None:
            raise DataError(f"{path}: tensor {e['name']} has unknown dtype {e['dtype']}")
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["nbytes"] != n * dt.itemsize or e["offset"] + e["nbytes"] > len(data):
            raise DataError(f"{path}: tensor {e['name']} extent is inconsistent with its shape")
        arr = np.frombuffer(data, dtype=dt, count=n, offset=e["offset"]).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(dt.newbyteorder("="))
    return manifest, tensors


@dataclass
class ModelArtifact:
    config: ModelConfig
    vocab: Vocabulary
    features: np.ndarray                 # (|I|, feature_dim), rows in full-index order
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    checksum: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        cfg = self.config
        if cfg.n_outputs != self.vocab.n_outputs:
            raise DataError(f"n_outputs {cfg.n_outputs} != output vocabulary size {self.vocab.n_outputs}")
        if self.features.shape != (self.vocab.n_items, cfg.feature_dim):
            raise DataError(f"feature table shape {self.features.shape} != "
                            f"{(self.vocab.n_items, cfg.feature_dim)}")
        for name, shape in cfg.param_shapes().items():
            p = self.params.get(name)
            if p is None or p.shape != shape:
                got = None if p is None else p.shape
                raise DataError(f"parameter {name} has shape {got}, expected {shape}")

    def input_table(self) -> np.ndarray:
        """Feature table with a leading all-zero padding row (row k+1 = item k)."""
        return np.vstack([np.zeros((1, self.config.feature_dim), dtype=np.float32),
                          self.features.astype(np.float32)])


def save(artifact: ModelArtifact, path: str | Path) -> str:
    artifact.validate()
    meta = {"config": asdict(artifact.config), "max_item_id": artifact.vocab.max_item_id,
            "n_items": artifact.vocab.n_items, "n_outputs": artifact.vocab.n_outputs,
            "training": artifact.metadata}
    tensors = {"vocab.full_items": artifact.vocab.full_items,
               "vocab.output_items": artifact.vocab.output_items,
               "features": artifact.features}
    tensors.update({name: artifact.params[name] for name in PARAM_NAMES})
    artifact.checksum = write_container(path, "model", meta, tensors)
    return artifact.checksum


def load(path: str | Path) -> ModelArtifact:
    manifest, tensors = read_container(path)
    if manifest.get("kind") != "model":
        raise DataError(f"{path}: container holds {manifest.get('kind')!r}, not a model")
    meta = manifest["meta"]
    cfg = ModelConfig(**meta["config"])
    if meta["n_outputs"] != cfg.n_outputs or len(tensors.get("vocab.output_items", ())) != cfg.n_outputs:
        raise DataError(f"{path}: manifest n_outputs {meta['n_outputs']} disagrees with stored tensors")
    if tensors.get("dense.W") is None or tensors["dense.W"].shape[0] != meta["n_outputs"]:
        raise DataError(f"{path}: output layer rows disagree with n_outputs {meta['n_outputs']}")
    vocab = Vocabulary(tensors.pop("vocab.full_items").astype(np.int64),
                       tensors.pop("vocab.output_items").astype(np.int64),
                       int(meta["max_item_id"]))
    features = tensors.pop("features")
    params = {name: tensors[name] for name in PARAM_NAMES if name in tensors}
    return ModelArtifact(cfg, vocab, features, params, meta.get("training", {}),
                         manifest["format_version"], manifest["checksum"])


def save_word2vec(model: Word2VecModel, path: str | Path) -> str:
    return write_container(path, "word2vec", {"config": model.config_dict()},
                           {"items": model.items, "input_vectors": model.input_vectors,
                            "context_vectors": model.context_vectors})


def load_word2vec(path: str | Path) -> Word2VecModel:
    manifest, t = read_container(path)
    if manifest.get("kind") != "word2vec":
        raise DataError(f"{path}: container holds {manifest.get('kind')!r}, not word2vec embeddings")
    return Word2VecModel(t["items"].astype(np.int64), t["input_vectors"], t["context_vectors"],
                         Word2VecConfig(**manifest["meta"]["config"]))


# --- text formats ---------------------------------------------------------

VOCAB_HEADER = "# ordrec-vocab v1"
WINDOWS_HEADER = "# ordrec-windows v1"
SEQUENCES_HEADER = "# ordrec-sequences v1"


def write_vocab(path: str | Path, vocab: Vocabulary) -> None:
    """One line per item: ``item_id<TAB>is_output``, ascending ids."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{VOCAB_HEADER} max_item_id={vocab.max_item_id}\n")
        for item in vocab.full_items:
            fh.write(f"{item}\t{int(vocab.is_output(int(item)))}\n")


def read_vocab(path: str | Path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if " ".join(header[:3]) != VOCAB_HEADER or not header[3].startswith("max_item_id="):
            raise DataError(f"{path}: not a vocabulary file")
        max_id = int(header[3].split("=", 1)[1])
        full, outputs = [], []
        for lineno, line in enumerate(fh, start=2):
            try:
                item, is_out = (int(v) for v in line.split("\t"))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: malformed vocabulary row") from None
            full.append(item)
            if is_out:
                outputs.append(item)
    return Vocabulary(np.array(full, dtype=np.int64), np.array(outputs, dtype=np.int64), max_id)


def write_windows(path: str | Path, windows: Sequence[TrainingWindow], seq_len: int) -> None:
    """``user<TAB>window_index<TAB>comma-separated inputs<TAB>label`` per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{WINDOWS_HEADER} seq_len={seq_len}\n")
        for w in windows:
            fh.write(f"{w.source_user}\t{w.window_index}\t{','.join(map(str, w.inputs))}\t{w.label}\n")


def read_windows(path: str | Path) -> tuple[list[TrainingWindow], int]:
    """Returns (windows, seq_len)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if " ".join(header[:3]) != WINDOWS_HEADER or not header[3].startswith("seq_len="):
            raise DataError(f"{path}: not a windows file")
        seq_len = int(header[3].split("=", 1)[1])
        windows = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            try:
                user, idx, inputs, label = parts
                inp = tuple(int(v) for v in inputs.split(","))
                w = TrainingWindow(inp, int(label), user, int(idx))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: malformed window row") from None
            if len(inp) != seq_len - 1 or w.label == PAD:
                raise DataError(f"{path}: line {lineno}: window does not match seq_len={seq_len}")
            windows.append(w)
    return windows, seq_len


def write_sequences(path: str | Path, seqs: Sequence[PurchaseSequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{SEQUENCES_HEADER}\n")
        for s in seqs:
            fh.write(f"{s.user_id}\t{','.join(map(str, s.items))}\n")


def read_sequences(path: str | Path) -> list[PurchaseSequence]:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().strip() != SEQUENCES_HEADER:
            raise DataError(f"{path}: not a sequences file")
        out = []
        for lineno, line in enumerate(fh, start=2):
            try:
                user, items = line.rstrip("\n").split("\t")
                out.append(PurchaseSequence(user, tuple(int(v) for v in items.split(","))))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: malformed sequence row") from None
    return out


def is_sequences_file(path: str | Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().startswith(SEQUENCES_HEADER)


def tensor_norms(path: str | Path) -> dict[str, float]:
    _, tensors = read_container(path)
    return {name: float(np.linalg.norm(t.astype(np.float64))) for name, t in tensors.items()}
