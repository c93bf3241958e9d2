"""Score normalization and distillation objectives with analytic gradients.

Reductions across the document axis use math.fsum (exactly rounded), so
loss and gradient values are bit-identical under any permutation of the
documents — the property that makes positive/negative labels unused
under the KL + dual-normalization recipe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossConfig",
    "minmax_normalize",
    "kl_div_loss",
    "margin_mse_loss",
    "mixed_loss",
    "ibneg_loss",
    "compute_loss",
]


@dataclass(frozen=True)
class LossConfig:
    kind: str = "kl"  # "kl" | "margin_mse" | "mixed"
    mmse_weight: float = 0.0
    normalize_teacher: bool = True
    normalize_student: bool = True
    ibneg_enabled: bool = False
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("kl", "margin_mse", "mixed"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.mmse_weight < 0:
            raise ValueError("mmse_weight must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


def minmax_normalize(scores) -> tuple[np.ndarray, bool]:
    """(s - min)/(max - min); returns (values, degenerate flag).

    The most relevant score maps to 1, the least to 0. A constant vector
    maps to all zeros with the degenerate flag set.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size < 2:
        raise ValueError("minmax_normalize needs at least 2 scores")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s), True
    return (s - lo) / (hi - lo), False


def _minmax_backward(grad_norm: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. min-max-normalized scores back to raw scores.

    At ties the first attaining index receives the min/max gradient.
    """
    s = np.asarray(scores, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s)
    a = int(np.argmax(s))
    b = int(np.argmin(s))
    r = hi - lo
    normed = (s - lo) / r
    sum_g = math.fsum(grad_norm)
    dot = math.fsum(float(g) * float(v) for g, v in zip(grad_norm, normed))
    grad = grad_norm / r
    grad[a] -= dot / r
    grad[b] += (dot - sum_g) / r
    return grad


def _softmax(x: np.ndarray, tau: float) -> np.ndarray:
    e = np.exp((x - x.max()) / tau)
    return e / math.fsum(e)


def _prep(student, teacher, cfg: LossConfig):
    s = np.asarray(student, dtype=np.float64)
    t = np.asarray(teacher, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"student/teacher length mismatch: {s.shape} vs {t.shape}")
    if s.size < 2:
        raise ValueError("need at least 2 scores")
    t_n = minmax_normalize(t)[0] if cfg.normalize_teacher else t
    s_n = minmax_normalize(s)[0] if cfg.normalize_student else s
    return s, t, s_n, t_n


def kl_div_loss(student, teacher, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """KL(p_teacher || q_student) over softmaxed (optionally normalized) scores."""
    s, _, s_n, t_n = _prep(student, teacher, cfg)
    p = _softmax(t_n, cfg.temperature)
    q = _softmax(s_n, cfg.temperature)
    loss = math.fsum(float(pi) * (math.log(pi) - math.log(qi)) for pi, qi in zip(p, q))
    grad_n = (q - p) / cfg.temperature
    grad = _minmax_backward(grad_n, s) if cfg.normalize_student else grad_n
    return loss, grad


def margin_mse_loss(student, teacher, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """MSE between teacher and student positive-minus-negative margins.

    Index 0 is the annotated positive; margins are taken against every
    other document.
    """
    s, _, s_n, t_n = _prep(student, teacher, cfg)
    n = s_n.size
    d_t = t_n[0] - t_n[1:]
    d_s = s_n[0] - s_n[1:]
    diff = d_t - d_s
    loss = math.fsum(float(x) * float(x) for x in diff) / (n - 1)
    d_margin = 2.0 * (d_s - d_t) / (n - 1)
    grad_n = np.empty(n, dtype=np.float64)
    grad_n[0] = math.fsum(d_margin)
    grad_n[1:] = -d_margin
    grad = _minmax_backward(grad_n, s) if cfg.normalize_student else grad_n
    return loss, grad


def mixed_loss(student, teacher, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """kl_div_loss + mmse_weight * margin_mse_loss."""
    kl, g_kl = kl_div_loss(student, teacher, cfg)
    if cfg.mmse_weight == 0.0:
        return kl, g_kl
    mm, g_mm = margin_mse_loss(student, teacher, cfg)
    return kl + cfg.mmse_weight * mm, g_kl + cfg.mmse_weight * g_mm


def compute_loss(student, teacher, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Dispatch on cfg.kind."""
    if cfg.kind == "kl":
        return kl_div_loss(student, teacher, cfg)
    if cfg.kind == "margin_mse":
        return margin_mse_loss(student, teacher, cfg)
    return mixed_loss(student, teacher, cfg)


def ibneg_loss(score_matrix) -> tuple[float, np.ndarray]:
    """In-batch negatives: mean cross-entropy of each row against its diagonal.

    Entry (i, j) scores query i against query j's positive document.
    """
    m = np.asarray(score_matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"score matrix must be square, got {m.shape}")
    b = m.shape[0]
    if b < 2:
        raise ValueError("need batch size >= 2")
    grad = np.empty_like(m)
    total = 0.0
    for i in range(b):
        row = m[i]
        mx = row.max()
        e = np.exp(row - mx)
        z = math.fsum(e)
        total += math.log(z) + mx - row[i]
        p = e / z
        p[i] -= 1.0
        grad[i] = p / b
    return total / b, grad
