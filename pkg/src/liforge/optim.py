"""AdamW, linear-decay-with-warmup, schedule-free variant, gradient clipping.

Optimizers operate on plain name->ndarray tensor maps so they are agnostic
to the encoder's parameter layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "LinearDecay",
    "ScheduleFree",
    "OptimConfig",
    "OptimState",
    "linear_decay_lr",
    "adamw_step",
    "init_optim_state",
    "schedulefree_eval_point",
    "schedulefree_adamw_step",
    "clip_gradients",
]


@dataclass(frozen=True)
class LinearDecay:
    total_steps: int
    warmup_frac: float = 0.05


@dataclass(frozen=True)
class ScheduleFree:
    warmup_frac: float = 0.05


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    scheduler: Union[LinearDecay, ScheduleFree] = field(default_factory=ScheduleFree)
    clip_max_norm: float | None = None

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        wf = self.scheduler.warmup_frac
        if not 0 <= wf < 1:
            raise ValueError("warmup_frac must be in [0, 1)")


@dataclass
class OptimState:
    """Moment accumulators plus, for schedule-free, the z/x iterate pair."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    z: dict[str, np.ndarray] | None = None
    x: dict[str, np.ndarray] | None = None
    warmup_steps: int = 0


def linear_decay_lr(step: int, total: int, warmup_frac: float, lr_max: float) -> float:
    """Linear warmup to lr_max, then linear decay to 0 at `total`."""
    if step > total or step < 0:
        raise ValueError(f"step {step} outside [0, {total}]")
    warmup = max(1, round(warmup_frac * total))
    if step < warmup:
        return lr_max * step / warmup
    return lr_max * (total - step) / (total - warmup)


def init_optim_state(params: dict[str, np.ndarray], cfg: OptimConfig,
                     total_steps: int = 0) -> OptimState:
    zeros = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
    state = OptimState(m=zeros, v={k: np.zeros_like(v) for k, v in zeros.items()})
    if isinstance(cfg.scheduler, ScheduleFree):
        state.z = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        state.x = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        state.warmup_steps = round(cfg.scheduler.warmup_frac * total_steps)
    return state


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptimState, cfg: OptimConfig, lr_t: float) -> dict[str, np.ndarray]:
    """Bias-corrected AdamW with decoupled weight decay; mutates state in place."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    out = {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}: {g.shape} vs {theta.shape}")
        state.m[name] = cfg.beta1 * state.m[name] + (1 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        out[name] = theta - lr_t * m_hat / (np.sqrt(v_hat) + cfg.eps) - lr_t * cfg.weight_decay * theta
    return out


def schedulefree_eval_point(state: OptimState, cfg: OptimConfig) -> dict[str, np.ndarray]:
    """Interpolation point y = (1 - beta1) z + beta1 x; gradients go here."""
    return {k: (1 - cfg.beta1) * state.z[k] + cfg.beta1 * state.x[k] for k in state.z}


def schedulefree_adamw_step(grads_at_y: dict[str, np.ndarray], state: OptimState,
                            cfg: OptimConfig) -> OptimState:
    """Schedule-free AdamW: z takes preconditioned steps, x averages them.

    During warmup the learning rate ramps linearly and x tracks z; after
    warmup x <- (1 - c) x + c z with c = 1/(post-warmup step count), so x
    is the running mean of post-warmup z iterates. Evaluation and
    checkpointing read x. Weight decay is applied at y.
    """
    state.t += 1
    t = state.t
    if state.warmup_steps > 0:
        lr_t = cfg.lr * min(1.0, t / state.warmup_steps)
    else:
        lr_t = cfg.lr
    bc2 = 1.0 - cfg.beta2 ** t
    y = schedulefree_eval_point(state, cfg)
    for name in state.z:
        g = np.asarray(grads_at_y[name], dtype=np.float64)
        if g.shape != state.z[name].shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        state.v[name] = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
        v_hat = state.v[name] / bc2
        step_dir = g / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * y[name]
        state.z[name] = state.z[name] - lr_t * step_dir
    if t <= state.warmup_steps:
        state.x = {k: np.array(v) for k, v in state.z.items()}
    else:
        c = 1.0 / (t - state.warmup_steps)
        # incremental form: exact at the z == x fixed point
        state.x = {k: state.x[k] + c * (state.z[k] - state.x[k]) for k in state.z}
    return state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be > 0")
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}
