"""End-to-end distillation training loop, data mixing, and checkpoint averaging."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Checkpoint,
    DataError,
    DMARK_ID,
    TripletRecord,
    Vocab,
    config_digest,
    read_triplets,
    tokenize,
)
from .encoder import EncoderConfig, EncoderParams, encode, encode_backward
from .losses import LossConfig, compute_loss, ibneg_loss, minmax_normalize
from .optim import (
    OptimConfig,
    ScheduleFree,
    adamw_step,
    clip_gradients,
    init_optim_state,
    linear_decay_lr,
    schedulefree_adamw_step,
    schedulefree_eval_point,
)
from .scoring import AugmentationMode, DynamicLength, augment_query

__all__ = [
    "TrainConfig",
    "MixSource",
    "InjectSpec",
    "MixSpec",
    "TrainResult",
    "downsample_triplets",
    "ensemble_teacher_scores",
    "build_posttrain_mix",
    "train",
    "average_checkpoints",
]


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    n_way: int = 32
    batch_size: int = 16
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    aug_mode: AugmentationMode = field(default_factory=DynamicLength)
    max_doc_len: int = 300
    checkpoint_every: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")


@dataclass(frozen=True)
class MixSource:
    path: str
    weight: float

    def __post_init__(self) -> None:
        if self.weight <= 0:
            raise ValueError("mix weights must be > 0")


@dataclass(frozen=True)
class InjectSpec:
    path: str
    fraction: float

    def __post_init__(self) -> None:
        if not 0 <= self.fraction < 1:
            raise ValueError("inject fraction must be in [0, 1)")


@dataclass(frozen=True)
class MixSpec:
    sources: tuple[MixSource, ...]
    inject_pretrain: InjectSpec | None = None


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint]
    trace: list[tuple[int, float, float]]
    skipped_batches: int = 0


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


def downsample_triplets(src, n_triplets: int, target_nway: int,
                        rng: np.random.Generator) -> list[TripletRecord]:
    """Sample n_triplets records and thin each to target_nway documents.

    Document 0 (the annotated positive) is always kept; the remaining
    target_nway - 1 negatives are sampled uniformly, preserving their
    original relative order and teacher scores.
    """
    records = list(src)
    if len(records) < n_triplets:
        raise ValueError(f"source has {len(records)} triplets, need {n_triplets}")
    picked = rng.choice(len(records), size=n_triplets, replace=False)
    out = []
    for idx in picked:
        record = records[int(idx)]
        if record.n_way < target_nway:
            raise ValueError(
                f"triplet {record.query_id} is {record.n_way}-way, target is {target_nway}"
            )
        neg_idx = rng.choice(record.n_way - 1, size=target_nway - 1, replace=False) + 1
        keep = [0] + sorted(int(i) for i in neg_idx)
        out.append(dataclasses.replace(record, docs=tuple(record.docs[i] for i in keep)))
    return out


def ensemble_teacher_scores(record: TripletRecord, teachers: list[str]) -> list[float]:
    """Min-max normalize each teacher's scores across the record, then average."""
    normalized = []
    for teacher in teachers:
        scores = []
        for doc in record.docs:
            if teacher not in doc.teacher_scores:
                raise DataError(
                    f"doc {doc.doc_id} in triplet {record.query_id} "
                    f"has no score from teacher {teacher!r}"
                )
            scores.append(doc.teacher_scores[teacher])
        normalized.append(minmax_normalize(scores)[0])
    n = len(teachers)
    return [math.fsum(normalized[t][i] for t in range(n)) / n for i in range(record.n_way)]


def _apportion(weights: list[float], total: int) -> list[int]:
    """Largest-remainder apportionment of `total` among `weights`."""
    w_sum = math.fsum(weights)
    quotas = [w / w_sum * total for w in weights]
    counts = [int(q) for q in quotas]
    remainders = sorted(
        range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _draw(records: list[TripletRecord], count: int, rng: np.random.Generator):
    """Sample `count` records: a permutation prefix, cycling when count > len."""
    if not records:
        raise DataError("empty dataset in mix")
    out = []
    while len(out) < count:
        perm = rng.permutation(len(records))
        out.extend(records[int(i)] for i in perm[: count - len(out)])
    return out


def build_posttrain_mix(spec: MixSpec, rng: np.random.Generator,
                        n_records: int | None = None) -> list[TripletRecord]:
    """Interleave datasets so realized proportions track the mix weights.

    Counts come from largest-remainder apportionment and the streams are
    merged by weighted round-robin, so proportions hold within +-1 record
    per 1,000 at any prefix. When inject_pretrain is set, pretrain records
    make up the stated fraction of the final stream.
    """
    datasets = [list(read_triplets(s.path)) for s in spec.sources]
    for source, data in zip(spec.sources, datasets):
        if not data:
            raise DataError(f"dataset {source.path} is empty")
    base_n = n_records if n_records is not None else sum(len(d) for d in datasets)
    counts = _apportion([s.weight for s in spec.sources], base_n)
    pools = [_draw(d, c, rng) for d, c in zip(datasets, counts)]
    weights = [float(c) for c in counts]

    if spec.inject_pretrain is not None:
        pre = list(read_triplets(spec.inject_pretrain.path))
        if not pre:
            raise DataError(f"dataset {spec.inject_pretrain.path} is empty")
        f = spec.inject_pretrain.fraction
        pre_count = round(f / (1 - f) * base_n)
        pools.append(_draw(pre, pre_count, rng))
        weights.append(float(pre_count))

    # Weighted round-robin with running credits.
    credits = [0.0] * len(pools)
    cursors = [0] * len(pools)
    w_total = sum(weights)
    out = []
    total = sum(len(p) for p in pools)
    for _ in range(total):
        for i in range(len(pools)):
            if cursors[i] < len(pools[i]):
                credits[i] += weights[i]
        best = max(
            (i for i in range(len(pools)) if cursors[i] < len(pools[i])),
            key=lambda i: (credits[i], -i),
        )
        credits[best] -= w_total
        out.append(pools[best][cursors[best]])
        cursors[best] += 1
    return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _teacher_vector(record: TripletRecord) -> list[float]:
    teachers = record.teachers
    if len(teachers) == 1:
        return [doc.teacher_scores[teachers[0]] for doc in record.docs]
    return ensemble_teacher_scores(record, teachers)


def _doc_tokens(text: str, vocab: Vocab, max_doc_len: int) -> list[int]:
    return ([DMARK_ID] + tokenize(text, vocab))[:max_doc_len]


def _is_degenerate(values) -> bool:
    arr = np.asarray(values, dtype=np.float64)
    return bool(arr.max() == arr.min())


def _sum_grad_dicts(contributions: list[dict[str, np.ndarray]],
                    into: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    for contrib in contributions:
        if into is None:
            into = {k: np.array(v) for k, v in contrib.items()}
        else:
            for k, v in contrib.items():
                if k in into:
                    into[k] = into[k] + v
                else:
                    into[k] = np.array(v)
    return into if into is not None else {}


def train(config: TrainConfig, data: list[TripletRecord], params: EncoderParams,
          enc_config: EncoderConfig, vocab: Vocab, trace_path=None) -> TrainResult:
    """Run the distillation loop and return the saved checkpoint list.

    Per batch: encode the augmented query and its n_way documents, score
    with MaxSim, apply the configured loss on (optionally normalized)
    scores, backpropagate, and step the optimizer. Degenerate-score
    batches are skipped but still advance the step counter.
    """
    if not data and config.total_steps > 0:
        raise DataError("training data stream is empty")
    digest = config_digest(repr(config))
    meta = lambda step: {"step": step, "seed": config.seed, "config_digest": digest}  # noqa: E731

    tensors = {k: np.asarray(v, dtype=np.float64) for k, v in params.as_dict().items()}
    schedule_free = isinstance(config.optim.scheduler, ScheduleFree)
    state = init_optim_state(tensors, config.optim, total_steps=config.total_steps)

    def eval_params() -> dict[str, np.ndarray]:
        return state.x if schedule_free else tensors

    checkpoints = [Checkpoint(tensors=eval_params(), meta=meta(0))]
    trace: list[tuple[int, float, float]] = []
    skipped = 0
    n_data = len(data)
    batch = config.batch_size

    for step in range(1, config.total_steps + 1):
        records = [data[((step - 1) * batch + i) % n_data] for i in range(batch)]

        if schedule_free:
            lr_t = config.optim.lr
            fwd_params = EncoderParams.from_dict(schedulefree_eval_point(state, config.optim))
        else:
            lr_t = linear_decay_lr(step, config.total_steps,
                                   config.optim.scheduler.warmup_frac, config.optim.lr)
            fwd_params = EncoderParams.from_dict(tensors)

        step_result = _batch_forward_backward(records, fwd_params, enc_config, config, vocab)
        if step_result is None:
            skipped += 1
            trace.append((step, float("nan"), lr_t))
            if config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
                checkpoints.append(Checkpoint(tensors=eval_params(), meta=meta(step)))
            continue
        loss, grads = step_result
        if not math.isfinite(loss):
            raise RuntimeError(f"non-finite loss at step {step}")

        if config.optim.clip_max_norm is not None:
            grads = clip_gradients(grads, config.optim.clip_max_norm)

        if schedule_free:
            schedulefree_adamw_step(grads, state, config.optim)
        else:
            new_tensors = adamw_step(tensors, grads, state, config.optim, lr_t)
            tensors.clear()
            tensors.update(new_tensors)

        trace.append((step, loss, lr_t))
        if config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
            checkpoints.append(Checkpoint(tensors=eval_params(), meta=meta(step)))

    if config.total_steps > 0 and checkpoints[-1].meta["step"] != config.total_steps:
        checkpoints.append(Checkpoint(tensors=eval_params(), meta=meta(config.total_steps)))

    if trace_path is not None:
        with open(trace_path, "w", encoding="utf-8") as fh:
            for step, loss, lr_t in trace:
                fh.write(f"{step}\t{loss!r}\t{lr_t!r}\n")

    return TrainResult(checkpoints=checkpoints, trace=trace, skipped_batches=skipped)


def _batch_forward_backward(records, fwd_params, enc_config, config, vocab):
    """One batch: returns (loss, param grads) or None when skipped as degenerate.

    Per-document gradient contributions are summed in ascending doc_id
    order, which together with fsum-based loss reductions makes the whole
    step bit-invariant to within-record document permutations.
    """
    batch = len(records)
    loss_cfg = config.loss
    encoded = []
    for record in records:
        teacher = _teacher_vector(record)
        if loss_cfg.normalize_teacher and _is_degenerate(teacher):
            return None
        q_tokens = augment_query(tokenize(record.query_text, vocab), config.aug_mode, vocab)
        q_emb = encode(q_tokens, fwd_params, enc_config, is_query=True)
        docs = []
        for doc in record.docs:
            d_tokens = _doc_tokens(doc.text, vocab, config.max_doc_len)
            docs.append((doc.doc_id, d_tokens, encode(d_tokens, fwd_params, enc_config, is_query=False)))
        encoded.append((record, teacher, q_tokens, q_emb, docs))

    losses = []
    upstreams = []  # per record: (dQ, [(doc_id, d_tokens, dD)])
    for record, teacher, q_tokens, q_emb, docs in encoded:
        sims = [q_emb.data @ d_emb.data.T for _, _, d_emb in docs]
        scores = [float(s.max(axis=1).sum()) for s in sims]
        if loss_cfg.normalize_student and _is_degenerate(scores):
            return None
        loss, gscore = compute_loss(scores, teacher, loss_cfg)
        losses.append(loss)
        gscore = gscore / batch
        dq = None
        doc_grads = []
        order = sorted(range(len(docs)), key=lambda k: docs[k][0])
        for k in order:
            doc_id, d_tokens, d_emb = docs[k]
            idx = sims[k].argmax(axis=1)
            dd = np.zeros_like(d_emb.data)
            np.add.at(dd, idx, gscore[k] * q_emb.data)
            dq_k = gscore[k] * d_emb.data[idx]
            dq = dq_k if dq is None else dq + dq_k
            doc_grads.append((doc_id, d_tokens, dd))
        upstreams.append((q_tokens, dq, doc_grads))

    total_loss = math.fsum(losses) / batch

    if loss_cfg.ibneg_enabled and batch >= 2:
        pos = [docs[0] for _, _, _, _, docs in encoded]
        matrix = np.empty((batch, batch))
        argmaxes = {}
        for i, (_, _, _, q_emb, _) in enumerate(encoded):
            for j, (_, _, p_emb) in enumerate(pos):
                s = q_emb.data @ p_emb.data.T
                argmaxes[i, j] = s.argmax(axis=1)
                matrix[i, j] = s.max(axis=1).sum()
        ib_loss, gmat = ibneg_loss(matrix)
        total_loss += ib_loss
        for i, (_, _, _, q_emb, _) in enumerate(encoded):
            q_tokens, dq, doc_grads = upstreams[i]
            for j, (pos_id, _, p_emb) in enumerate(pos):
                idx = argmaxes[i, j]
                dq = dq + gmat[i, j] * p_emb.data[idx]
                if j == i:
                    _, _, dd = doc_grads[[g[0] for g in doc_grads].index(pos_id)]
                    np.add.at(dd, idx, gmat[i, j] * q_emb.data)
                else:
                    # cross-record gradient onto record j's positive document
                    other_grads = upstreams[j][2]
                    _, _, dd = other_grads[[g[0] for g in other_grads].index(pos_id)]
                    np.add.at(dd, idx, gmat[i, j] * q_emb.data)
            upstreams[i] = (q_tokens, dq, doc_grads)

    grads: dict[str, np.ndarray] | None = None
    for q_tokens, dq, doc_grads in upstreams:
        contribs = [
            encode_backward(d_tokens, fwd_params, enc_config, False, dd)
            for _, d_tokens, dd in doc_grads
        ]
        contribs.append(encode_backward(q_tokens, fwd_params, enc_config, True, dq))
        grads = _sum_grad_dicts(contribs, grads)
    return total_loss, grads


# ---------------------------------------------------------------------------
# Checkpoint averaging
# ---------------------------------------------------------------------------


def average_checkpoints(ckpts: list[Checkpoint]) -> Checkpoint:
    """Elementwise arithmetic mean of same-shaped tensor maps."""
    if not ckpts:
        raise ValueError("need at least one checkpoint")
    names = set(ckpts[0].tensors)
    for ckpt in ckpts[1:]:
        if set(ckpt.tensors) != names:
            diff = names.symmetric_difference(ckpt.tensors)
            raise ValueError(f"tensor name mismatch: {sorted(diff)}")
    averaged = {}
    for name in names:
        shapes = {c.tensors[name].shape for c in ckpts}
        if len(shapes) > 1:
            raise ValueError(f"tensor {name!r} shape mismatch: {sorted(shapes)}")
        stack = np.stack([c.tensors[name].astype(np.float64) for c in ckpts])
        averaged[name] = stack.mean(axis=0)
    meta = {"source_steps": [c.meta.get("step") for c in ckpts], "averaged_from": len(ckpts)}
    return Checkpoint(tensors=averaged, meta=meta)
