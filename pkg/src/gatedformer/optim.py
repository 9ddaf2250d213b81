"""AdamW with decoupled weight decay, learning-rate schedules, seeded RNG streams."""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .tensor import Tensor


def rng_stream(seed: int, purpose: str, counter: int = 0) -> np.random.Generator:
    """Independent generator per (seed, purpose, counter); identical inputs give identical draws."""
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), tag, int(counter)])))


@dataclass(frozen=True)
class LRSchedule:
    kind: str = "warmup_inv_sqrt"
    peak_lr: float = 1e-3
    warmup_steps: int = 4000

    def __post_init__(self):
        if self.kind not in ("constant", "warmup_inv_sqrt"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be non-negative")
        if self.kind == "warmup_inv_sqrt" and self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")


def lr_at(schedule: LRSchedule, t: int) -> float:
    if t < 1:
        raise ValueError(f"steps are counted from 1, got {t}")
    if schedule.kind == "constant":
        return schedule.peak_lr
    w = schedule.warmup_steps
    if t <= w:
        return schedule.peak_lr * t / w
    return schedule.peak_lr * math.sqrt(w / t)


NO_DECAY_SUFFIXES = ("bias", "b1", "b2", "b3", "bg", "gamma", "beta")


def default_decay_mask(name: str) -> bool:
    """Biases and LayerNorm scale/shift are not decayed."""
    return name.rsplit(".", 1)[-1] not in NO_DECAY_SUFFIXES


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    base_lr: float = 1e-3
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class AdamW:
    def __init__(self, named_params: Iterable[tuple[str, Tensor]], beta1=0.9, beta2=0.98,
                 epsilon=1e-8, weight_decay=0.01, base_lr=1e-3, decay_all: bool = False,
                 clip_grad_norm: Optional[float] = None):
        self.params = dict(named_params)
        self.decay = {n: decay_all or default_decay_mask(n) for n in self.params}
        self.clip_grad_norm = clip_grad_norm
        self.state = AdamWState(beta1, beta2, epsilon, weight_decay, base_lr)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            grads[name] = g
        if self.clip_grad_norm is not None:
            norm = math.sqrt(float(np.sum([np.sum(g * g) for g in grads.values()])))
            if norm > self.clip_grad_norm:
                factor = self.clip_grad_norm / norm
                grads = {n: g * factor for n, g in grads.items()}
        adamw_step(self.state, self.params, grads, self.state.base_lr if lr is None else lr,
                   self.decay)


def adamw_step(state: AdamWState, params: dict, grads: dict, lr_t: float,
               decay: Optional[dict] = None) -> None:
    """One decoupled-weight-decay Adam update; parameters get fresh arrays."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        if decay is None or decay[name]:
            update = update + state.weight_decay * p.data
        p.data = p.data - lr_t * update
