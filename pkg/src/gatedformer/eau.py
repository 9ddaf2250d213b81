"""Evaluator Adjuster Unit.

Given a k-vector ``x`` (one position of an attention sublayer's output):

    h = relu(W1 x + b1)      W1: [k/2 x k]
    e = sigmoid(W2 h + b2)   W2: [k x k/2]   evaluation scores in (0, 1)
    a = tanh(W3 x + b3)      W3: [k x k]     adjustments in (-1, 1)
    y = x + a * e

Applied position-wise over any number of leading axes.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .layers import Module, _check_last, uniform_fan_in
from .tensor import Tensor


class EauIntermediates(NamedTuple):
    h: Tensor
    e: Tensor
    a: Tensor


class EvaluatorAdjusterUnit(Module):
    def __init__(self, k: int, rng: np.random.Generator):
        if not isinstance(k, (int, np.integer)) or k < 2 or k % 2:
            raise ValueError(f"EAU needs an even dimension k >= 2, got {k}")
        self.k = int(k)
        half = self.k // 2
        self.w1 = Tensor(uniform_fan_in(rng, half, self.k), requires_grad=True)
        self.b1 = Tensor(np.zeros(half), requires_grad=True)
        self.w2 = Tensor(uniform_fan_in(rng, self.k, half), requires_grad=True)
        self.b2 = Tensor(np.zeros(self.k), requires_grad=True)
        self.w3 = Tensor(uniform_fan_in(rng, self.k, self.k), requires_grad=True)
        self.b3 = Tensor(np.zeros(self.k), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return eau_forward(self, x)


def eau_init(k: int, rng: np.random.Generator) -> EvaluatorAdjusterUnit:
    return EvaluatorAdjusterUnit(k, rng)


def eau_param_count(k: int) -> int:
    """2k^2 + 5k/2: W1, b1, W2, b2, W3, b3."""
    return 2 * k * k + 5 * k // 2


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add_bias(T.matmul(x, T.transpose(w, (1, 0))), b)


def eau_intermediates(unit: EvaluatorAdjusterUnit, x: Tensor) -> EauIntermediates:
    _check_last("eau", x, unit.k)
    h = T.relu(_affine(x, unit.w1, unit.b1))
    e = T.sigmoid(_affine(h, unit.w2, unit.b2))
    a = T.tanh(_affine(x, unit.w3, unit.b3))
    return EauIntermediates(h, e, a)


def eau_forward(unit: EvaluatorAdjusterUnit, x: Tensor) -> Tensor:
    _, e, a = eau_intermediates(unit, x)
    return T.add(x, T.mul(a, e))
