"""Baseline transformer building blocks on top of the tensor tape."""
from __future__ import annotations

import math
from typing import Iterator, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, record


class Module:
    """Minimal parameter container: parameters are requires_grad Tensor attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def uniform_fan_in(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def _check_last(op: str, x: Tensor, dim: int) -> None:
    if x.ndim < 1 or x.shape[-1] != dim:
        raise ShapeError(f"{op}: expected last axis {dim}, got shape {x.shape}")


class LinearLayer(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Tensor(uniform_fan_in(rng, out_dim, in_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)


def linear_forward(layer: LinearLayer, x: Tensor) -> Tensor:
    """y = x W^T + b over the last axis."""
    _check_last("linear", x, layer.in_dim)
    return T.add_bias(T.matmul(x, T.transpose(layer.weight, (1, 0))), layer.bias)


class LayerNormLayer(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.dim, self.eps = dim, eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(self, x)


def layer_norm(layer: LayerNormLayer, x: Tensor) -> Tensor:
    _check_last("layer_norm", x, layer.dim)
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + layer.eps)
    xhat = xc * inv
    G = layer.gamma.data
    lead = tuple(range(X.ndim - 1))

    def grad_fn(g):
        gx_hat = g * G
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", xhat * G + layer.beta.data, (x, layer.gamma, layer.beta), grad_fn)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator, dropout: float = 0.0):
        if num_heads < 1 or dim % num_heads:
            raise ValueError(f"num_heads={num_heads} must divide model dim {dim}")
        self.dim, self.num_heads, self.dropout = dim, num_heads, dropout
        self.wq = LinearLayer(dim, dim, rng)
        self.wk = LinearLayer(dim, dim, rng)
        self.wv = LinearLayer(dim, dim, rng)
        self.wo = LinearLayer(dim, dim, rng)

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    def __call__(self, q_in, k_in, v_in, attn_mask=None, rng=None) -> Tensor:
        return mha_forward(self, q_in, k_in, v_in, attn_mask, rng)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, seq, dim = x.shape
    x = T.reshape(x, (*lead, seq, heads, dim // heads))
    n = x.ndim
    return T.transpose(x, (*range(n - 3), n - 2, n - 3, n - 1))


def mha_forward(mha: MultiHeadAttention, q_in: Tensor, k_in: Tensor, v_in: Tensor,
                attn_mask: Optional[np.ndarray] = None,
                rng: Optional[np.random.Generator] = None) -> Tensor:
    """Scaled dot-product attention over ``[..., seq, k]`` inputs.

    ``attn_mask`` is boolean, True where a query may attend to a key, shaped
    ``[seq_q, seq_k]`` or ``[batch, seq_q, seq_k]``.
    """
    for t in (q_in, k_in, v_in):
        _check_last("mha", t, mha.dim)
    if k_in.shape != v_in.shape or q_in.shape[:-2] != k_in.shape[:-2]:
        raise ShapeError(f"mha: incompatible q/k/v shapes {q_in.shape}, {k_in.shape}, {v_in.shape}")
    sq, sk = q_in.shape[-2], k_in.shape[-2]
    if attn_mask is not None:
        attn_mask = np.asarray(attn_mask, dtype=bool)
        if attn_mask.shape[-2:] != (sq, sk):
            raise ShapeError(f"mha: mask {attn_mask.shape} does not match [{sq}x{sk}]")
        if attn_mask.ndim == 3:
            attn_mask = attn_mask[:, None, :, :]

    h = mha.num_heads
    q = _split_heads(mha.wq(q_in), h)
    k = _split_heads(mha.wk(k_in), h)
    v = _split_heads(mha.wv(v_in), h)
    n = k.ndim
    scores = T.scale(T.matmul(q, T.transpose(k, (*range(n - 2), n - 1, n - 2))),
                     1.0 / math.sqrt(mha.head_dim))
    weights = T.dropout(T.softmax_rows(scores, attn_mask), mha.dropout, rng)
    ctx = T.matmul(weights, v)
    ctx = T.transpose(ctx, (*range(n - 3), n - 2, n - 3, n - 1))
    ctx = T.reshape(ctx, (*q_in.shape[:-1], mha.dim))
    return mha.wo(ctx)


class FeedForward(Module):
    def __init__(self, dim: int, ffn_dim: int, rng: np.random.Generator, dropout: float = 0.0):
        self.dropout = dropout
        self.lin1 = LinearLayer(dim, ffn_dim, rng)
        self.lin2 = LinearLayer(ffn_dim, dim, rng)

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        return self.lin2(T.dropout(T.relu(self.lin1(x)), self.dropout, rng))


class SinusoidalPositionalEncoding:
    """Fixed sine/cosine table; holds no learnable parameters."""

    def __init__(self, max_len: int, dim: int):
        pos = np.arange(max_len)[:, None]
        rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
        table = np.zeros((max_len, dim))
        table[:, 0::2] = np.sin(pos * rates)
        table[:, 1::2] = np.cos(pos * rates[: dim // 2])
        self.table = table

    def __call__(self, seq_len: int) -> np.ndarray:
        if seq_len > self.table.shape[0]:
            raise ValueError(f"sequence length {seq_len} exceeds maximum {self.table.shape[0]}")
        return self.table[:seq_len]


def label_smoothed_cross_entropy(logits: Tensor, targets: Sequence[int], smoothing: float,
                                 pad_id: int = 0) -> Tensor:
    """Mean over non-pad rows of -sum(q * log softmax(logits)).

    ``q`` puts ``1 - smoothing`` on the gold id and ``smoothing / (V - 1)`` on
    every other id. Pad rows contribute nothing.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    if logits.ndim != 2:
        raise ShapeError(f"cross entropy expects [N x V] logits, got {logits.shape}")
    N, V = logits.shape
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    if y.shape[0] != N:
        raise ShapeError(f"{N} logit rows but {y.shape[0]} targets")
    if y.size and (y.min() < 0 or y.max() >= V):
        raise IndexError(f"target ids must lie in [0, {V})")
    keep = y != pad_id
    count = int(keep.sum())
    if count == 0:
        raise ValueError("every target is padding")

    X = logits.data
    shifted = X - X.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    q = np.full((N, V), smoothing / (V - 1) if V > 1 else 0.0)
    q[np.arange(N), y] = 1.0 - smoothing
    q[~keep] = 0.0
    loss = -(q * log_p).sum() / count

    def grad_fn(g):
        p = np.exp(log_p)
        p[~keep] = 0.0
        return ((p - q) * (g / count),)

    return record("cross_entropy", np.asarray(loss), (logits,), grad_fn)
