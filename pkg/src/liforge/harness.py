"""Synthetic corpus generation with a latent-topic oracle teacher.

Relevance is planted in a latent topic space rather than in surface
tokens, so a trained encoder can beat purely lexical matching. Every
vocabulary word carries a latent topic vector; documents and queries are
token bags sampled around per-item topic centers, and the oracle teacher
scores a pair by latent cosine plus optional gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Qrels, TripletDoc, TripletRecord, Vocab, make_rng
from .encoder import EncoderConfig, EncoderParams, encode, init_params
from .evalkit import evaluate_run, exact_search
from .core import RunList, tokenize, DMARK_ID
from .scoring import augment_query
from .training import TrainConfig, train

__all__ = ["SynthSpec", "SynthData", "generate", "run_ablation", "AblationTable",
           "distill_and_evaluate"]

ORACLE_TEACHER = "oracle"

_TOKEN_SHARPNESS = 6.0
_QUERY_JITTER = 0.15
_MAX_POSITIVES = 5
_REDRAW_LIMIT = 20


class GenerationError(RuntimeError):
    """Raised when a spec cannot produce a calibrated dataset."""


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    vocab_size: int = 200
    n_docs: int = 2000
    n_queries: int = 600
    topic_dim: int = 8
    doc_len: tuple[int, int] = (15, 30)
    query_len: tuple[int, int] = (3, 8)
    teacher_noise_sigma: float = 0.05
    n_way: int = 4
    cos_threshold: float = 0.9

    def __post_init__(self) -> None:
        if min(self.vocab_size, self.n_docs, self.n_queries, self.topic_dim,
               self.doc_len[0], self.query_len[0]) < 1:
            raise ValueError("all counts must be >= 1")
        if self.teacher_noise_sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class SynthData:
    corpus: list[tuple[str, str]]
    queries: list[tuple[str, str]]
    qrels: Qrels
    triplets: list[TripletRecord]
    doc_centers: np.ndarray
    query_centers: np.ndarray


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _sample_bag(rng: np.random.Generator, center: np.ndarray, word_latents: np.ndarray,
                words: list[str], length: int) -> str:
    logits = _TOKEN_SHARPNESS * (word_latents @ center)
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    idx = rng.choice(len(words), size=length, p=probs)
    return " ".join(words[int(i)] for i in idx)


def generate(spec: SynthSpec) -> SynthData:
    """Deterministically generate (corpus, queries, qrels, triplets) from a spec."""
    rng = make_rng(spec.seed)
    words = [f"w{i:04d}" for i in range(spec.vocab_size)]
    word_latents = _unit_rows(rng, spec.vocab_size, spec.topic_dim)

    doc_centers = _unit_rows(rng, spec.n_docs, spec.topic_dim)
    corpus = []
    for i in range(spec.n_docs):
        length = int(rng.integers(spec.doc_len[0], spec.doc_len[1] + 1))
        corpus.append((f"d{i:05d}", _sample_bag(rng, doc_centers[i], word_latents, words, length)))

    queries = []
    query_centers = np.zeros((spec.n_queries, spec.topic_dim))
    anchors = []
    qrels_map: dict[str, dict[str, int]] = {}
    for i in range(spec.n_queries):
        for attempt in range(_REDRAW_LIMIT):
            anchor = int(rng.integers(spec.n_docs))
            center = doc_centers[anchor] + _QUERY_JITTER * rng.standard_normal(spec.topic_dim)
            center /= np.linalg.norm(center)
            cosines = doc_centers @ center
            positives = np.flatnonzero(cosines >= spec.cos_threshold)
            if cosines[anchor] >= spec.cos_threshold and 1 <= positives.size <= _MAX_POSITIVES:
                break
        else:
            raise GenerationError(
                f"query {i}: no calibrated topic center found in {_REDRAW_LIMIT} attempts"
            )
        qid = f"q{i:05d}"
        length = int(rng.integers(spec.query_len[0], spec.query_len[1] + 1))
        queries.append((qid, _sample_bag(rng, center, word_latents, words, length)))
        query_centers[i] = center
        anchors.append(anchor)
        qrels_map[qid] = {f"d{int(j):05d}": 1 for j in positives}

    qrels = Qrels(judgments=qrels_map)

    corpus_texts = dict(corpus)
    triplets = []
    for i, (qid, qtext) in enumerate(queries):
        positives = set(qrels_map[qid])
        anchor_id = f"d{anchors[i]:05d}"
        negatives = []
        while len(negatives) < spec.n_way - 1:
            j = int(rng.integers(spec.n_docs))
            doc_id = f"d{j:05d}"
            if doc_id not in positives and doc_id not in negatives:
                negatives.append(doc_id)
        doc_ids = [anchor_id] + negatives
        docs = []
        for doc_id in doc_ids:
            cos = float(doc_centers[int(doc_id[1:])] @ query_centers[i])
            noise = float(rng.normal(0.0, spec.teacher_noise_sigma)) if spec.teacher_noise_sigma > 0 else 0.0
            docs.append(TripletDoc(doc_id=doc_id, text=corpus_texts[doc_id],
                                   teacher_scores={ORACLE_TEACHER: cos + noise}))
        triplets.append(TripletRecord(query_id=qid, query_text=qtext, docs=tuple(docs)))

    return SynthData(corpus=corpus, queries=queries, qrels=qrels, triplets=triplets,
                     doc_centers=doc_centers, query_centers=query_centers)


# ---------------------------------------------------------------------------
# Ablation runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float, ...]], ...]

    def to_tsv(self) -> str:
        lines = ["config\t" + "\t".join(self.columns)]
        for label, values in self.rows:
            lines.append(label + "\t" + "\t".join(f"{v:.6f}" for v in values))
        return "\n".join(lines) + "\n"


def encode_corpus(corpus, params: EncoderParams, enc_config: EncoderConfig,
                  vocab: Vocab, max_doc_len: int):
    out = []
    for doc_id, text in corpus:
        tokens = ([DMARK_ID] + tokenize(text, vocab))[:max_doc_len]
        out.append((doc_id, encode(tokens, params, enc_config, is_query=False)))
    return out


def evaluate_encoder(params: EncoderParams, enc_config: EncoderConfig, vocab: Vocab,
                     corpus, queries, qrels: Qrels, metrics: list[str],
                     max_doc_len: int = 300, k: int = 100):
    """Exact-search the corpus for each query and score the run."""
    corpus_embs = encode_corpus(corpus, params, enc_config, vocab, max_doc_len)
    scored = {}
    for qid, text in queries:
        tokens = augment_query(tokenize(text, vocab), enc_config.aug_mode, vocab)
        q_emb = encode(tokens, params, enc_config, is_query=True)
        scored[qid] = exact_search(q_emb, corpus_embs, k)
    run = RunList.from_scores(scored)
    return evaluate_run(run, qrels, metrics)


def distill_and_evaluate(spec: SynthSpec, train_config: TrainConfig,
                         enc_config: EncoderConfig | None = None,
                         heldout_frac: float = 0.2,
                         metric: str = "ndcg@10") -> dict[str, float]:
    """Train on synthetic triplets, report the held-out metric before and after.

    The last `heldout_frac` of queries are excluded from training and used
    only for evaluation. Returns {"untrained": ..., "trained": ...}.
    """
    data = generate(spec)
    vocab = Vocab.build(text for _, text in data.corpus)
    n_heldout = max(1, int(round(heldout_frac * len(data.queries))))
    heldout_qids = {qid for qid, _ in data.queries[-n_heldout:]}
    train_triplets = [t for t in data.triplets if t.query_id not in heldout_qids]
    heldout_queries = [(qid, text) for qid, text in data.queries if qid in heldout_qids]

    if enc_config is None:
        enc_config = EncoderConfig(vocab_size=len(vocab), hidden=32, out_dim=16, mixer=True)
    enc_config = replace(enc_config, vocab_size=len(vocab),
                         aug_mode=train_config.aug_mode,
                         max_doc_len=train_config.max_doc_len)
    params = init_params(enc_config, seed=train_config.seed)
    before = evaluate_encoder(params, enc_config, vocab, data.corpus, heldout_queries,
                              data.qrels, [metric], max_doc_len=train_config.max_doc_len)
    result = train(train_config, train_triplets, params, enc_config, vocab)
    final = EncoderParams.from_checkpoint(result.checkpoints[-1])
    after = evaluate_encoder(final, enc_config, vocab, data.corpus, heldout_queries,
                             data.qrels, [metric], max_doc_len=train_config.max_doc_len)
    return {"untrained": before.slices[metric].mean, "trained": after.slices[metric].mean}


def run_ablation(grid: list[TrainConfig], spec: SynthSpec, metrics: list[str],
                 enc_config: EncoderConfig | None = None, heldout_frac: float = 0.2,
                 labels: list[str] | None = None, threads: int = 1) -> AblationTable:
    """Train every config on identical data/init and compare held-out metrics.

    Grid cells are independent; `threads` caps parallel cells. Output is
    deterministic regardless of thread count.
    """
    data = generate(spec)
    vocab = Vocab.build(text for _, text in data.corpus)
    n_heldout = max(1, int(round(heldout_frac * len(data.queries))))
    heldout_qids = {qid for qid, _ in data.queries[-n_heldout:]}
    train_triplets = [t for t in data.triplets if t.query_id not in heldout_qids]
    heldout_queries = [(qid, text) for qid, text in data.queries if qid in heldout_qids]

    if enc_config is None:
        enc_config = EncoderConfig(vocab_size=len(vocab), hidden=32, out_dim=16, mixer=True)

    def run_cell(config: TrainConfig) -> tuple[float, ...]:
        cell_enc = replace(enc_config, aug_mode=config.aug_mode, max_doc_len=config.max_doc_len)
        params = init_params(cell_enc, seed=config.seed)
        result = train(config, train_triplets, params, cell_enc, vocab)
        final = EncoderParams.from_checkpoint(result.checkpoints[-1])
        report = evaluate_encoder(final, cell_enc, vocab, data.corpus, heldout_queries,
                                  data.qrels, metrics, max_doc_len=config.max_doc_len)
        return tuple(report.slices[m].mean for m in metrics)

    if threads > 1 and len(grid) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_cell, grid))
    else:
        results = [run_cell(config) for config in grid]

    if labels is None:
        labels = [f"config{i}" for i in range(len(grid))]
    rows = tuple((label, values) for label, values in zip(labels, results))
    return AblationTable(columns=tuple(metrics), rows=rows)
