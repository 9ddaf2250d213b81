"""Gated residual connection: ``y = r + sigmoid(Wg r + bg) * s``.

``r`` is the residual stream entering a sublayer and ``s`` is that
sublayer's output. LayerNorm, when used, is applied by the caller after the
gated add.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .layers import Module, uniform_fan_in
from .tensor import ShapeError, Tensor


class GatedResidualConnection(Module):
    def __init__(self, k: int, rng: np.random.Generator, gate_bias_init: float = 0.0):
        if not isinstance(k, (int, np.integer)) or k < 1:
            raise ValueError(f"GRC needs a positive dimension, got {k}")
        self.k = int(k)
        self.wg = Tensor(uniform_fan_in(rng, self.k, self.k), requires_grad=True)
        self.bg = Tensor(np.full(self.k, float(gate_bias_init)), requires_grad=True)
        # Test hook: when set, the gate is this constant instead of sigmoid(Wg r + bg).
        self.forced_gate: Optional[float] = None

    def __call__(self, r: Tensor, s: Tensor) -> Tensor:
        return grc_forward(self, r, s)


def grc_init(k: int, rng: np.random.Generator, gate_bias_init: float = 0.0) -> GatedResidualConnection:
    return GatedResidualConnection(k, rng, gate_bias_init)


def grc_param_count(k: int) -> int:
    return k * k + k


def grc_gate(gate: GatedResidualConnection, r: Tensor) -> Tensor:
    if r.ndim < 1 or r.shape[-1] != gate.k:
        raise ShapeError(f"grc: expected last axis {gate.k}, got shape {r.shape}")
    if gate.forced_gate is not None:
        return Tensor(np.full(r.shape, float(gate.forced_gate)))
    return T.sigmoid(T.add_bias(T.matmul(r, T.transpose(gate.wg, (1, 0))), gate.bg))


def grc_forward(gate: GatedResidualConnection, r: Tensor, s: Tensor) -> Tensor:
    if r.shape != s.shape:
        raise ShapeError(f"grc: residual {r.shape} and sublayer output {s.shape} differ")
    return T.add(r, T.mul(grc_gate(gate, r), s))
