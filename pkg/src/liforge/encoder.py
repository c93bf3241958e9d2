"""Toy trainable late-interaction encoder with exact analytic gradients.

Embedding lookup, optional single-head self-attention mixer (no residual,
no positional encoding), linear projection, and row normalization. Small
enough to finite-difference-check end to end, expressive enough that
appended mask tokens become contextual when the mixer is on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Checkpoint, EmbeddingMatrix, make_rng
from .scoring import AugmentationMode, DynamicLength

__all__ = ["EncoderConfig", "EncoderParams", "init_params", "encode", "encode_backward"]

TENSOR_NAMES = ("emb", "att_q", "att_k", "att_v", "proj")

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden: int
    out_dim: int
    mixer: bool = True
    aug_mode: AugmentationMode = DynamicLength()
    max_doc_len: int = 300

    def __post_init__(self) -> None:
        if self.vocab_size < 1 or self.hidden < 1 or self.out_dim < 1:
            raise ValueError("vocab_size, hidden, out_dim must all be >= 1")


@dataclass(frozen=True)
class EncoderParams:
    """emb: V x h, att_*: h x h (present iff mixer), proj: h x d."""

    emb: np.ndarray
    proj: np.ndarray
    att_q: np.ndarray | None = None
    att_k: np.ndarray | None = None
    att_v: np.ndarray | None = None

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {"emb": self.emb, "proj": self.proj}
        if self.att_q is not None:
            out.update({"att_q": self.att_q, "att_k": self.att_k, "att_v": self.att_v})
        return out

    @classmethod
    def from_dict(cls, tensors: dict[str, np.ndarray]) -> "EncoderParams":
        return cls(
            emb=np.asarray(tensors["emb"], dtype=np.float64),
            proj=np.asarray(tensors["proj"], dtype=np.float64),
            att_q=np.asarray(tensors["att_q"], dtype=np.float64) if "att_q" in tensors else None,
            att_k=np.asarray(tensors["att_k"], dtype=np.float64) if "att_k" in tensors else None,
            att_v=np.asarray(tensors["att_v"], dtype=np.float64) if "att_v" in tensors else None,
        )

    def to_checkpoint(self, meta: dict | None = None) -> Checkpoint:
        return Checkpoint(tensors=self.as_dict(), meta=meta or {})

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "EncoderParams":
        return cls.from_dict(ckpt.tensors)


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Seeded uniform init: emb/proj in +-1/sqrt(h), attention maps in +-1/h."""
    rng = make_rng(seed)
    h = config.hidden
    bound = 1.0 / math.sqrt(h)
    emb = rng.uniform(-bound, bound, size=(config.vocab_size, h))
    proj = rng.uniform(-bound, bound, size=(h, config.out_dim))
    if not config.mixer:
        return EncoderParams(emb=emb, proj=proj)
    ab = 1.0 / h
    att_q = rng.uniform(-ab, ab, size=(h, h))
    att_k = rng.uniform(-ab, ab, size=(h, h))
    att_v = rng.uniform(-ab, ab, size=(h, h))
    return EncoderParams(emb=emb, proj=proj, att_q=att_q, att_k=att_k, att_v=att_v)


def _check_tokens(tokens: list[int], config: EncoderConfig) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("token list must be nonempty")
    if ids.max() >= config.vocab_size or ids.min() < 0:
        raise ValueError(f"token id out of range for vocab_size={config.vocab_size}")
    return ids


def _row_softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _forward(ids: np.ndarray, params: EncoderParams, config: EncoderConfig):
    x = params.emb[ids]
    if config.mixer:
        q = x @ params.att_q
        k = x @ params.att_k
        v = x @ params.att_v
        scale = 1.0 / math.sqrt(config.hidden)
        attn = _row_softmax((q @ k.T) * scale)
        h = attn @ v
        cache = (x, q, k, v, attn, scale)
    else:
        h = x
        cache = (x,)
    y = h @ params.proj
    norms = np.linalg.norm(y, axis=1)
    safe = norms >= _NORM_FLOOR
    z = np.where(safe[:, None], y / np.maximum(norms, _NORM_FLOOR)[:, None], y)
    return z, (cache, h, y, norms, safe)


def encode(tokens: list[int], params: EncoderParams, config: EncoderConfig,
           is_query: bool) -> EmbeddingMatrix:
    """Embed, optionally mix with self-attention, project, row-normalize.

    Markers and augmentation are applied by the caller; `is_query` is kept
    for interface symmetry with the backward pass.
    """
    ids = _check_tokens(tokens, config)
    z, (_, _, _, _, safe) = _forward(ids, params, config)
    return EmbeddingMatrix(data=z, normalized=bool(safe.all()))


def encode_backward(tokens: list[int], params: EncoderParams, config: EncoderConfig,
                    is_query: bool, upstream_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Exact parameter gradients for a given upstream m x d gradient.

    Gradients for repeated token ids accumulate on the shared embedding
    row. Rows whose pre-normalization norm fell below the degenerate
    floor pass the upstream gradient through unchanged.
    """
    ids = _check_tokens(tokens, config)
    g = np.asarray(upstream_grad, dtype=np.float64)
    z, (cache, h, y, norms, safe) = _forward(ids, params, config)
    if g.shape != y.shape:
        raise ValueError(f"upstream grad shape {g.shape} != encode output {y.shape}")

    # Row-normalization Jacobian: (I - zz^T)/|y| per row; degenerate rows identity.
    dy = np.empty_like(y)
    for i in range(y.shape[0]):
        if safe[i]:
            dy[i] = (g[i] - np.dot(g[i], z[i]) * z[i]) / norms[i]
        else:
            dy[i] = g[i]

    grads: dict[str, np.ndarray] = {}
    grads["proj"] = h.T @ dy
    dh = dy @ params.proj.T

    if config.mixer:
        x, q, k, v, attn, scale = cache
        dv = attn.T @ dh
        dattn = dh @ v.T
        ds = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True))
        dq = scale * (ds @ k)
        dk = scale * (ds.T @ q)
        grads["att_q"] = x.T @ dq
        grads["att_k"] = x.T @ dk
        grads["att_v"] = x.T @ dv
        dx = dq @ params.att_q.T + dk @ params.att_k.T + dv @ params.att_v.T
    else:
        dx = dh

    demb = np.zeros_like(params.emb)
    np.add.at(demb, ids, dx)
    grads["emb"] = demb
    return grads
