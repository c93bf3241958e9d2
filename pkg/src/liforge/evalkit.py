"""BM25 dev-set mining, exact MaxSim search, and ranking metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import DataError, EmbeddingMatrix, Qrels, RunList

__all__ = [
    "Bm25Index",
    "build_bm25_index",
    "bm25_score",
    "bm25_search",
    "mine_small_devset",
    "exact_search",
    "MetricSlice",
    "MetricReport",
    "evaluate_run",
]


# ---------------------------------------------------------------------------
# BM25
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bm25Index:
    """Inverted index with Okapi BM25 parameters."""

    postings: dict[str, tuple[tuple[str, int], ...]]  # term -> ((doc_id, tf), ...) sorted
    doc_len: dict[str, int]
    avgdl: float
    n_docs: int
    k1: float = 0.9
    b: float = 0.4


def _terms(text: str) -> list[str]:
    return text.lower().split()


def build_bm25_index(corpus: list[tuple[str, str]], k1: float = 0.9, b: float = 0.4) -> Bm25Index:
    if not corpus:
        raise DataError("cannot index an empty corpus")
    postings: dict[str, dict[str, int]] = {}
    doc_len = {}
    for doc_id, text in corpus:
        terms = _terms(text)
        doc_len[doc_id] = len(terms)
        for term in terms:
            bucket = postings.setdefault(term, {})
            bucket[doc_id] = bucket.get(doc_id, 0) + 1
    frozen = {
        term: tuple(sorted(bucket.items()))
        for term, bucket in postings.items()
    }
    avgdl = sum(doc_len.values()) / len(doc_len)
    return Bm25Index(postings=frozen, doc_len=doc_len, avgdl=avgdl,
                     n_docs=len(doc_len), k1=k1, b=b)


def _idf(index: Bm25Index, term: str) -> float:
    df = len(index.postings.get(term, ()))
    return math.log(1.0 + (index.n_docs - df + 0.5) / (df + 0.5))


def bm25_score(query_terms: list[str], doc_id: str, index: Bm25Index) -> float:
    """Okapi BM25 score of one document for a tokenized query."""
    if doc_id not in index.doc_len:
        raise ValueError(f"unknown doc_id {doc_id!r}")
    length_norm = 1 - index.b + index.b * index.doc_len[doc_id] / index.avgdl
    score = 0.0
    for term in query_terms:
        tf = dict(index.postings.get(term, ())).get(doc_id, 0)
        if tf == 0:
            continue
        score += _idf(index, term) * tf * (index.k1 + 1) / (tf + index.k1 * length_norm)
    return score


def bm25_search(query_terms: list[str], index: Bm25Index, depth: int) -> list[tuple[str, float]]:
    """Top-`depth` docs by BM25, score-descending, doc_id-ascending ties."""
    scores: dict[str, float] = {}
    for term in set(query_terms):
        idf = _idf(index, term)
        count = query_terms.count(term)
        for doc_id, tf in index.postings.get(term, ()):
            length_norm = 1 - index.b + index.b * index.doc_len[doc_id] / index.avgdl
            scores[doc_id] = scores.get(doc_id, 0.0) + count * idf * tf * (index.k1 + 1) / (
                tf + index.k1 * length_norm
            )
    ranked = sorted(scores.items(), key=lambda e: (-e[1], e[0]))
    return ranked[:depth]


def mine_small_devset(queries: list[tuple[str, str]], qrels: Qrels,
                      corpus: list[tuple[str, str]], index: Bm25Index,
                      depth: int = 250) -> tuple[list[tuple[str, str]], Qrels]:
    """Compact dev corpus: BM25 top-`depth` per query plus all positives."""
    keep: set[str] = set()
    for _, text in queries:
        for doc_id, _ in bm25_search(_terms(text), index, depth):
            keep.add(doc_id)
    for qid, _ in queries:
        keep.update(qrels.relevant(qid))
    sub_corpus = [(doc_id, text) for doc_id, text in corpus if doc_id in keep]
    return sub_corpus, qrels


# ---------------------------------------------------------------------------
# Exact MaxSim search
# ---------------------------------------------------------------------------


def exact_search(query: EmbeddingMatrix, corpus_embs: list[tuple[str, EmbeddingMatrix]],
                 k: int) -> list[tuple[str, float]]:
    """Top-k documents by MaxSim over the whole encoded corpus."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not corpus_embs:
        return []
    doc_ids = [doc_id for doc_id, _ in corpus_embs]
    tokens, offsets = kernels.pack_embeddings([emb.data for _, emb in corpus_embs])
    scores = kernels.maxsim_scores(np.asarray(query.data), tokens, offsets)
    ranked = sorted(zip(doc_ids, scores.tolist()), key=lambda e: (-e[1], e[0]))
    return ranked[:k]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSlice:
    per_query: dict[str, float]
    mean: float


@dataclass(frozen=True)
class MetricReport:
    slices: dict[str, MetricSlice] = field(default_factory=dict)
    skipped_queries: tuple[str, ...] = ()

    def to_text(self) -> str:
        lines = [f"{name}\t{s.mean:.6f}" for name, s in sorted(self.slices.items())]
        if self.skipped_queries:
            lines.append(f"# skipped (no relevant docs): {len(self.skipped_queries)}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        lines = []
        for name, s in sorted(self.slices.items()):
            lines.append(json.dumps(
                {"metric": name, "mean": s.mean, "per_query": s.per_query},
                sort_keys=True,
            ))
        return "\n".join(lines) + "\n"


def _gain(grade: int, exponential: bool) -> float:
    return float(2 ** grade - 1) if exponential else float(grade)


def _ndcg(ranked: list[str], rels: dict[str, int], k: int, exponential: bool) -> float:
    dcg = sum(
        _gain(rels.get(doc_id, 0), exponential) / math.log2(i + 2)
        for i, doc_id in enumerate(ranked[:k])
    )
    ideal = sorted(rels.values(), reverse=True)[:k]
    idcg = sum(_gain(g, exponential) / math.log2(i + 2) for i, g in enumerate(ideal))
    return dcg / idcg if idcg > 0 else 0.0


def _mrr(ranked: list[str], rels: dict[str, int], k: int) -> float:
    for i, doc_id in enumerate(ranked[:k]):
        if rels.get(doc_id, 0) > 0:
            return 1.0 / (i + 1)
    return 0.0


def _recall(ranked: list[str], rels: dict[str, int], k: int) -> float:
    hits = sum(1 for d in ranked[:k] if rels.get(d, 0) > 0)
    return hits / len(rels)


def _map(ranked: list[str], rels: dict[str, int], k: int) -> float:
    hits = 0
    precision_sum = 0.0
    for i, doc_id in enumerate(ranked[:k]):
        if rels.get(doc_id, 0) > 0:
            hits += 1
            precision_sum += hits / (i + 1)
    return precision_sum / min(len(rels), k)


def _hit_rate(ranked: list[str], rels: dict[str, int], k: int) -> float:
    return 1.0 if any(rels.get(d, 0) > 0 for d in ranked[:k]) else 0.0


_METRIC_FNS = {
    "ndcg": _ndcg,
    "mrr": _mrr,
    "recall": _recall,
    "map": _map,
    "hit_rate": _hit_rate,
}


def evaluate_run(run: RunList, qrels: Qrels, metrics: list[str],
                 exponential_gain: bool = False) -> MetricReport:
    """Compute metrics like "ndcg@10" per query and averaged.

    Queries with no positively judged documents are excluded from the
    means and reported in skipped_queries.
    """
    parsed = []
    for spec in metrics:
        name, _, k_str = spec.partition("@")
        if name not in _METRIC_FNS or not k_str.isdigit():
            raise ValueError(f"unknown metric spec {spec!r}")
        parsed.append((spec, name, int(k_str)))

    skipped = []
    active: dict[str, dict[str, float]] = {spec: {} for spec, _, _ in parsed}
    for qid in sorted(run.rankings):
        if qid not in qrels.judgments:
            raise DataError(f"run query {qid!r} has no qrels entry")
        rels = qrels.relevant(qid)
        if not rels:
            skipped.append(qid)
            continue
        ranked = [doc_id for doc_id, _ in run.rankings[qid]]
        for spec, name, k in parsed:
            if name == "ndcg":
                value = _ndcg(ranked, rels, k, exponential_gain)
            else:
                value = _METRIC_FNS[name](ranked, rels, k)
            active[spec][qid] = value

    slices = {}
    for spec, _, _ in parsed:
        per_query = active[spec]
        mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
        slices[spec] = MetricSlice(per_query=per_query, mean=mean)
    return MetricReport(slices=slices, skipped_queries=tuple(skipped))
