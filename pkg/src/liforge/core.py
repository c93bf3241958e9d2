"""Shared domain types, tokenizer, RNG, and file formats.

Everything downstream (scoring, training, evaluation) builds on the types
here. All types are immutable-by-convention after construction and safe
for concurrent reads.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

__all__ = [
    "PAD_ID",
    "MASK_ID",
    "UNK_ID",
    "QMARK_ID",
    "DMARK_ID",
    "RESERVED_TOKENS",
    "Vocab",
    "EmbeddingMatrix",
    "TripletRecord",
    "TripletDoc",
    "Checkpoint",
    "Qrels",
    "RunList",
    "make_rng",
    "tokenize",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointFormatError",
    "DataError",
    "read_corpus",
    "write_corpus",
    "read_queries",
    "write_queries",
    "read_qrels",
    "write_qrels",
    "read_run",
    "write_run",
    "read_triplets",
    "write_triplets",
    "config_digest",
]

PAD_ID = 0
MASK_ID = 1
UNK_ID = 2
QMARK_ID = 3
DMARK_ID = 4

RESERVED_TOKENS = ("[PAD]", "[MASK]", "[UNK]", "[Q]", "[D]")


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file is malformed; message names the field."""


class DataError(ValueError):
    """Raised when input data violates a contract (missing scores, empty sets)."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# Vocabulary and tokenization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocab:
    """Bidirectional token map with ids 0..4 reserved for special tokens."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        """Build from a corpus: whitespace-split, lowercased, sorted for determinism."""
        words = sorted({w for text in texts for w in text.lower().split()})
        id_to_token = list(RESERVED_TOKENS)
        token_to_id: dict[str, int] = {}
        for w in words:
            if w in RESERVED_TOKENS:
                continue
            token_to_id[w] = len(id_to_token)
            id_to_token.append(w)
        return cls(token_to_id=token_to_id, id_to_token=tuple(id_to_token))

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        """Id of a non-reserved token; unknown (or reserved surface form) -> UNK."""
        return self.token_to_id.get(token, UNK_ID)


def tokenize(text: str, vocab: Vocab) -> list[int]:
    """Whitespace-split, lowercase, map to ids. Unknown tokens map to UNK."""
    return [vocab.lookup(w) for w in text.lower().split()]


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Per-token embedding rows for one query or document (row-major m x d)."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError(f"embedding matrix must be m x d with m,d >= 1, got {self.data.shape}")
        if self.normalized:
            norms = np.linalg.norm(self.data, axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-6):
                raise ValueError("normalized flag set but some row norm deviates from 1 by > 1e-6")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# Triplets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TripletDoc:
    doc_id: str
    text: str
    teacher_scores: dict[str, float]


@dataclass(frozen=True)
class TripletRecord:
    """One query with an ordered n-way document list and per-teacher scores.

    By convention index 0 is the annotated positive; only losses that
    consume the positive label (MarginMSE, in-batch negatives) may read it.
    """

    query_id: str
    query_text: str
    docs: tuple[TripletDoc, ...]

    def __post_init__(self) -> None:
        if len(self.docs) < 2:
            raise DataError(f"triplet {self.query_id} has {len(self.docs)} docs, need >= 2")
        teachers = set(self.docs[0].teacher_scores)
        for doc in self.docs:
            missing = teachers - set(doc.teacher_scores)
            extra = set(doc.teacher_scores) - teachers
            if missing or extra:
                raise DataError(
                    f"triplet {self.query_id} doc {doc.doc_id}: inconsistent teachers "
                    f"(missing {sorted(missing)}, extra {sorted(extra)})"
                )

    @property
    def n_way(self) -> int:
        return len(self.docs)

    @property
    def teachers(self) -> list[str]:
        return sorted(self.docs[0].teacher_scores)


# ---------------------------------------------------------------------------
# Qrels / runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Qrels:
    """Graded relevance judgments: query_id -> doc_id -> grade (int >= 0)."""

    judgments: dict[str, dict[str, int]]

    def __post_init__(self) -> None:
        if not self.judgments:
            raise DataError("qrels must contain at least one query")
        for qid, docs in self.judgments.items():
            for did, grade in docs.items():
                if grade < 0:
                    raise DataError(f"qrels grade for ({qid}, {did}) is negative")

    def relevant(self, qid: str) -> dict[str, int]:
        """Positively judged docs for a query."""
        return {d: g for d, g in self.judgments.get(qid, {}).items() if g > 0}


@dataclass(frozen=True)
class RunList:
    """Ranked retrieval output: query_id -> [(doc_id, score)] score-descending."""

    rankings: dict[str, tuple[tuple[str, float], ...]]

    def __post_init__(self) -> None:
        for qid, entries in self.rankings.items():
            ids = [d for d, _ in entries]
            if len(set(ids)) != len(ids):
                raise DataError(f"run for {qid} has duplicate doc ids")
            for (d1, s1), (d2, s2) in zip(entries, entries[1:]):
                if s1 < s2 or (s1 == s2 and d1 > d2):
                    raise DataError(
                        f"run for {qid} not sorted (score desc, doc_id asc) at {d1!r}/{d2!r}"
                    )

    @staticmethod
    def from_scores(scored: dict[str, list[tuple[str, float]]]) -> "RunList":
        """Sort per query by score descending, doc_id ascending on ties."""
        rankings = {
            qid: tuple(sorted(entries, key=lambda e: (-e[1], e[0])))
            for qid, entries in scored.items()
        }
        return RunList(rankings=rankings)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"LIFORGE1"


@dataclass(frozen=True)
class Checkpoint:
    """Named float32 tensor map plus training metadata; bit-exact on disk."""

    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        converted = {}
        for name, values in self.tensors.items():
            arr = np.ascontiguousarray(values, dtype=np.float32)
            converted[name] = arr
        object.__setattr__(self, "tensors", converted)

    def equals_bitwise(self, other: "Checkpoint") -> bool:
        if set(self.tensors) != set(other.tensors):
            return False
        for name, arr in self.tensors.items():
            b = other.tensors[name]
            if arr.shape != b.shape or arr.tobytes() != b.tobytes():
                return False
        return True


def config_digest(config) -> str:
    """Stable short digest of any JSON-serializable config object."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the LIFORGE1 container: magic, header length, JSON header, f32 payload."""
    entries = []
    offset = 0
    payload_parts = []
    for name in ckpt.tensors:
        arr = ckpt.tensors[name]
        raw = arr.astype("<f4", copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload_parts.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "meta": ckpt.meta}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for part in payload_parts:
            fh.write(part)


def load_checkpoint(path) -> Checkpoint:
    """Read and validate a LIFORGE1 container; reproduces the input bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:8]!r}")
    if len(blob) < 16:
        raise CheckpointFormatError("file truncated before header length")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise CheckpointFormatError(f"header length {header_len} exceeds file size")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"header not valid JSON: {exc}") from exc
    payload = blob[16 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        name, shape, offset = entry["name"], entry["shape"], entry["offset"]
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor name {name!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointFormatError(
                f"tensor {name!r}: payload range [{offset}, {offset + nbytes}) "
                f"exceeds payload size {len(payload)}"
            )
        flat = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = flat.reshape(shape).copy()
    return Checkpoint(tensors=tensors, meta=header.get("meta", {}))


# ---------------------------------------------------------------------------
# File formats (corpus JSONL, queries TSV, TREC qrels/runs, triplet JSONL)
# ---------------------------------------------------------------------------


def read_corpus(path) -> list[tuple[str, str]]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            docs.append((obj["id"], obj["text"]))
    if not docs:
        raise DataError(f"corpus {path} is empty")
    return docs


def write_corpus(docs: Iterable[tuple[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, text in docs:
            fh.write(json.dumps({"id": doc_id, "text": text}, sort_keys=True) + "\n")


def read_queries(path) -> list[tuple[str, str]]:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            qid, text = line.split("\t", 1)
            queries.append((qid, text))
    return queries


def write_queries(queries: Iterable[tuple[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, text in queries:
            fh.write(f"{qid}\t{text}\n")


def read_qrels(path) -> Qrels:
    judgments: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            qid, _, did, grade = parts
            judgments.setdefault(qid, {})[did] = int(grade)
    return Qrels(judgments=judgments)


def write_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels.judgments):
            for did in sorted(qrels.judgments[qid]):
                fh.write(f"{qid} 0 {did} {qrels.judgments[qid][did]}\n")


def read_run(path) -> RunList:
    scored: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            qid, _, did, _, score, _ = parts
            scored.setdefault(qid, []).append((did, float(score)))
    return RunList.from_scores(scored)


def write_run(run: RunList, path, tag: str = "liforge") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(run.rankings):
            for rank, (did, score) in enumerate(run.rankings[qid], start=1):
                fh.write(f"{qid} Q0 {did} {rank} {score:.9g} {tag}\n")


def _record_to_obj(record: TripletRecord) -> dict:
    return {
        "query_id": record.query_id,
        "query_text": record.query_text,
        "docs": [
            {"doc_id": d.doc_id, "text": d.text, "teacher_scores": d.teacher_scores}
            for d in record.docs
        ],
    }


def _record_from_obj(obj: dict) -> TripletRecord:
    return TripletRecord(
        query_id=obj["query_id"],
        query_text=obj["query_text"],
        docs=tuple(
            TripletDoc(
                doc_id=d["doc_id"],
                text=d["text"],
                teacher_scores={k: float(v) for k, v in d["teacher_scores"].items()},
            )
            for d in obj["docs"]
        ),
    )


def read_triplets(path) -> Iterator[TripletRecord]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield _record_from_obj(json.loads(line))


def write_triplets(records: Iterable[TripletRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(_record_to_obj(record), sort_keys=True) + "\n")
