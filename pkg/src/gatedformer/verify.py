"""Central-difference gradient oracle and per-component gradient checks.

The oracle only ever calls forward evaluation with no tape active, so it is
independent of the backward rules it is used to check.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .eau import EvaluatorAdjusterUnit
from .grc import GatedResidualConnection
from .layers import FeedForward, LayerNormLayer, MultiHeadAttention, label_smoothed_cross_entropy
from .model import ModelConfig, build_model, causal_mask
from .optim import rng_stream
from .tensor import Tape, Tensor

DEFAULT_H = 1e-5
KINK_MARGIN = 1e-6
COMPONENTS = ("eau", "grc", "mha", "layer_norm", "ffn", "full_micro_model")
DEFAULT_TOLERANCE = {"full_micro_model": 1e-4}
# Tightest tolerance the round-off floor is sized for; asking for less is allowed but fails honestly.
FLOOR_TOLERANCE = 1e-5


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def roundoff_scale(f_value: float, h: float) -> float:
    """Absolute round-off noise of a central difference of f at step h."""
    return 64 * np.finfo(np.float64).eps * max(1.0, abs(f_value)) / h


def finite_diff_grad(f: Callable[[Tensor], object], x, h: float = DEFAULT_H) -> np.ndarray:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate i of x."""
    if h <= 0:
        raise ValueError("h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if not np.all(np.isfinite(base)):
        raise ValueError("finite differences need a finite point")
    flat = base.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        values = []
        for step in (h, -h):
            probe = flat.copy()
            probe[i] += step
            out = f(Tensor(probe.reshape(base.shape)))
            value = float(out.data if isinstance(out, Tensor) else out)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite function value at coordinate {i}")
            values.append(value)
        grad[i] = (values[0] - values[1]) / (2 * h)
    return grad.reshape(base.shape)


@dataclass
class TensorCheck:
    name: str
    analytic_norm: float
    numeric_norm: float
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    component: str
    seed: int
    tolerance: float
    h: float
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = [f"{self.component}: {'PASS' if self.passed else 'FAIL'} "
               f"(tol={self.tolerance:g}, h={self.h:g}, seed={self.seed})"]
        for c in self.checks:
            out.append(f"  {c.name:<40} |a|={c.analytic_norm:.6e} |n|={c.numeric_norm:.6e} "
                       f"rel={c.max_rel_error:.3e} {'ok' if c.passed else 'FAIL'}")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    weights = Tensor(rng.normal(size=out.shape))
    return lambda y: T.sum(T.mul(y, weights))


def _jitter(named, rng) -> None:
    for _, p in named:
        p.data = p.data + rng.normal(0.0, 0.1, p.shape)


def _setup(component: str, rng: np.random.Generator):
    """Returns named leaf tensors and a closure computing the scalar loss from them."""
    k, seq = 4, 3
    if component == "eau":
        unit = EvaluatorAdjusterUnit(k, rng)
        _jitter(unit.named_parameters(), rng)
        x = Tensor(rng.normal(size=(seq, k)), requires_grad=True)
        proj = _project(x, rng)
        return [*unit.named_parameters(), ("x", x)], lambda: proj(unit(x))
    if component == "grc":
        gate = GatedResidualConnection(k, rng)
        _jitter(gate.named_parameters(), rng)
        r = Tensor(rng.normal(size=(seq, k)), requires_grad=True)
        s = Tensor(rng.normal(size=(seq, k)), requires_grad=True)
        proj = _project(r, rng)
        return [*gate.named_parameters(), ("r", r), ("s", s)], lambda: proj(gate(r, s))
    if component == "mha":
        mha = MultiHeadAttention(k, 2, rng)
        _jitter(mha.named_parameters(), rng)
        q = Tensor(rng.normal(size=(seq, k)), requires_grad=True)
        kv = Tensor(rng.normal(size=(seq, k)), requires_grad=True)
        mask = causal_mask(seq)
        proj = _project(q, rng)
        return ([*mha.named_parameters(), ("q_in", q), ("kv_in", kv)],
                lambda: proj(mha(q, kv, kv, mask)))
    if component == "layer_norm":
        norm = LayerNormLayer(k)
        _jitter(norm.named_parameters(), rng)
        x = Tensor(rng.normal(size=(seq, k)), requires_grad=True)
        proj = _project(x, rng)
        return [*norm.named_parameters(), ("x", x)], lambda: proj(norm(x))
    if component == "ffn":
        ffn = FeedForward(k, 8, rng)
        _jitter(ffn.named_parameters(), rng)
        x = Tensor(rng.normal(size=(seq, k)), requires_grad=True)
        proj = _project(x, rng)
        return [*ffn.named_parameters(), ("x", x)], lambda: proj(ffn(x))
    if component == "full_micro_model":
        cfg = ModelConfig(num_layers=1, max_seq_len=8, model_dim=4, ffn_dim=8, num_heads=2,
                          src_vocab_size=11, tgt_vocab_size=11, use_eau=True, use_grc=True,
                          dropout=0.0, label_smoothing=0.1, seed=int(rng.integers(2**31)))
        model = build_model(cfg)
        _jitter(model.named_parameters(), rng)
        src = np.array([[2, 4, 5], [2, 6, 0]])  # second row padded
        tgt_in = rng.integers(2, 11, size=(2, seq))
        tgt_out = rng.integers(3, 11, size=(2, seq))

        def loss():
            logits = model(src, tgt_in)
            flat = T.reshape(logits, (-1, cfg.tgt_vocab_size))
            return label_smoothed_cross_entropy(flat, tgt_out.reshape(-1), cfg.label_smoothing)

        return list(model.named_parameters()), loss
    raise ValueError(f"unknown component {component!r}; choose from {COMPONENTS}")


def gradcheck_component(component: str, seed: int = 0, tolerance: float | None = None,
                        h: float = DEFAULT_H, max_resamples: int = 20) -> GradCheckReport:
    """Compare tape gradients with central differences for every leaf tensor.

    Coordinates whose true derivative is zero (e.g. attention key biases,
    which softmax shift invariance cancels) would otherwise compare round-off
    noise against zero, so the relative error's denominator is floored at
    round-off / max(tolerance, FLOOR_TOLERANCE).

    Probe points with a ReLU pre-activation within ``KINK_MARGIN`` of zero are
    redrawn, since the derivative is ambiguous there.
    """
    if tolerance is None:
        tolerance = DEFAULT_TOLERANCE.get(component, 1e-5)
    for attempt in range(max_resamples):
        rng = rng_stream(seed, f"gradcheck/{component}", attempt)
        named, loss_fn = _setup(component, rng)
        T._kinks.enabled, T._kinks.closest = True, np.inf
        try:
            loss_fn()
        finally:
            T._kinks.enabled = False
        if T._kinks.closest >= KINK_MARGIN:
            break
    else:
        raise RuntimeError(f"{component}: could not find a probe point away from ReLU kinks")

    for _, p in named:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    # At the default tolerances a coordinate fails only if |a - n| exceeds both
    # tolerance * magnitude and round-off.
    floor = max(1e-12, roundoff_scale(float(loss.data), h) / max(tolerance, FLOOR_TOLERANCE))

    report = GradCheckReport(component, seed, tolerance, h)
    for name, p in named:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        original = p.data

        def f(probe: Tensor, p=p) -> Tensor:
            p.data = probe.data
            return loss_fn()

        try:
            numeric = finite_diff_grad(f, original, h)
        finally:
            p.data = original
        err = float(relative_error(analytic, numeric, floor).max()) if analytic.size else 0.0
        report.checks.append(TensorCheck(name, float(np.linalg.norm(analytic)),
                                         float(np.linalg.norm(numeric)), err, err < tolerance))
    return report


def gradcheck_all(seed: int = 0, tolerance: float | None = None) -> list[GradCheckReport]:
    return [gradcheck_component(c, seed, tolerance) for c in COMPONENTS]
