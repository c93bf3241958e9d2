"""MaxSim similarity and query augmentation policies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .core import MASK_ID, QMARK_ID, EmbeddingMatrix, Vocab

__all__ = [
    "NoAugmentation",
    "FixedTokens",
    "FixedMaxLength",
    "DynamicLength",
    "AugmentationMode",
    "maxsim",
    "maxsim_batch",
    "padded_query_length",
    "augment_query",
]


@dataclass(frozen=True)
class NoAugmentation:
    """Queries are encoded as-is, no mask padding."""


@dataclass(frozen=True)
class FixedTokens:
    """Append exactly k mask tokens regardless of query length."""

    k: int = 8

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError("k must be >= 0")


@dataclass(frozen=True)
class FixedMaxLength:
    """Pad (or truncate) every query to a fixed total length."""

    max_len: int = 32

    def __post_init__(self) -> None:
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass(frozen=True)
class DynamicLength:
    """Pad to the next multiple of `base`, guaranteeing >= min_masks masks."""

    base: int = 32
    min_masks: int = 8

    def __post_init__(self) -> None:
        if self.base < 1 or self.min_masks < 0:
            raise ValueError("base must be >= 1 and min_masks >= 0")


AugmentationMode = Union[NoAugmentation, FixedTokens, FixedMaxLength, DynamicLength]


def maxsim(q: EmbeddingMatrix, d: EmbeddingMatrix) -> float:
    """Sum over query rows of the max dot product over document rows."""
    if q.dim != d.dim:
        raise ValueError(f"dim mismatch: query d={q.dim}, doc d={d.dim}")
    sims = q.data @ d.data.T
    return float(sims.max(axis=1).sum())


def maxsim_batch(q: EmbeddingMatrix, docs: list[EmbeddingMatrix]) -> list[float]:
    """MaxSim of one query against each document, order preserved."""
    if not docs:
        return []
    for d in docs:
        if d.dim != q.dim:
            raise ValueError(f"dim mismatch: query d={q.dim}, doc d={d.dim}")
    tokens, offsets = kernels.pack_embeddings([d.data for d in docs])
    return kernels.maxsim_scores(np.asarray(q.data), tokens, offsets).tolist()


def padded_query_length(token_count: int, mode: AugmentationMode) -> int:
    """Target query length (marker-inclusive) under an augmentation mode."""
    if token_count < 1:
        raise ValueError("token_count must be >= 1")
    if isinstance(mode, NoAugmentation):
        return token_count
    if isinstance(mode, FixedTokens):
        return token_count + mode.k
    if isinstance(mode, FixedMaxLength):
        return mode.max_len
    if isinstance(mode, DynamicLength):
        padded = math.ceil(token_count / mode.base) * mode.base
        if padded - token_count < mode.min_masks:
            padded = token_count + mode.min_masks
        return padded
    raise TypeError(f"unknown augmentation mode {mode!r}")


def augment_query(tokens: list[int], mode: AugmentationMode, vocab: Vocab) -> list[int]:
    """Prepend the query marker and pad with mask tokens per the mode.

    Under FixedMaxLength, over-length queries are truncated to max_len
    before padding.
    """
    out = [QMARK_ID] + list(tokens)
    if isinstance(mode, FixedMaxLength) and len(out) > mode.max_len:
        out = out[: mode.max_len]
    target = padded_query_length(len(out), mode)
    out.extend([MASK_ID] * (target - len(out)))
    return out
