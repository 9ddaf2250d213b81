"""Encoder-decoder transformer with optional EAU and GRC variants.

Encoder layer:  x -> MHA -> [EAU] -> add|GRC -> LN -> FFN -> add|GRC -> LN
Decoder layer:  y -> self-MHA -> [EAU] -> add|GRC -> LN
                  -> cross-MHA -> [EAU] -> add|GRC -> LN
                  -> FFN -> add|GRC -> LN
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .data import BOS_ID, EOS_ID, PAD_ID
from .eau import EvaluatorAdjusterUnit, eau_param_count
from .grc import GatedResidualConnection, grc_param_count
from .layers import (FeedForward, LayerNormLayer, LinearLayer, Module, MultiHeadAttention,
                     SinusoidalPositionalEncoding)
from .optim import rng_stream
from .tensor import Tensor


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_layers: int
    max_seq_len: int
    model_dim: int
    ffn_dim: int
    src_vocab_size: int
    tgt_vocab_size: int
    use_eau: bool = False
    use_grc: bool = False
    num_heads: Optional[int] = None
    dropout: float = 0.1
    label_smoothing: float = 0.1
    seed: int = 0
    layer_norm_eps: float = 1e-5
    scale_embeddings: bool = True
    gate_bias_init: float = 0.0

    def __post_init__(self):
        if self.num_heads is None:
            self.num_heads = 8 if self.model_dim >= 256 else 4
        self.validate()

    def validate(self) -> None:
        for name in ("num_layers", "max_seq_len", "model_dim", "ffn_dim", "num_heads",
                     "src_vocab_size", "tgt_vocab_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.use_eau and self.model_dim % 2:
            raise ConfigError(f"model_dim must be even when use_eau is set, got {self.model_dim}")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"num_heads={self.num_heads} does not divide model_dim={self.model_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.src_vocab_size < 4 or self.tgt_vocab_size < 4:
            raise ConfigError("vocabularies need at least the 4 special tokens")
        if self.layer_norm_eps <= 0:
            raise ConfigError("layer_norm_eps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        k = cfg.model_dim
        self.self_attn = MultiHeadAttention(k, cfg.num_heads, rng, cfg.dropout)
        self.ffn = FeedForward(k, cfg.ffn_dim, rng, cfg.dropout)
        self.norm1 = LayerNormLayer(k, cfg.layer_norm_eps)
        self.norm2 = LayerNormLayer(k, cfg.layer_norm_eps)
        if cfg.use_eau:
            self.eau1 = EvaluatorAdjusterUnit(k, rng)
        if cfg.use_grc:
            self.grc1 = GatedResidualConnection(k, rng, cfg.gate_bias_init)
            self.grc2 = GatedResidualConnection(k, rng, cfg.gate_bias_init)
        self.dropout = cfg.dropout

    def __call__(self, x: Tensor, mask: np.ndarray, rng=None) -> Tensor:
        s = self.self_attn(x, x, x, mask, rng)
        x = self.norm1(_residual(self, 1, x, s, rng))
        s = self.ffn(x, rng)
        return self.norm2(_residual(self, 2, x, s, rng, eau=False))


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        k = cfg.model_dim
        self.self_attn = MultiHeadAttention(k, cfg.num_heads, rng, cfg.dropout)
        self.cross_attn = MultiHeadAttention(k, cfg.num_heads, rng, cfg.dropout)
        self.ffn = FeedForward(k, cfg.ffn_dim, rng, cfg.dropout)
        self.norm1 = LayerNormLayer(k, cfg.layer_norm_eps)
        self.norm2 = LayerNormLayer(k, cfg.layer_norm_eps)
        self.norm3 = LayerNormLayer(k, cfg.layer_norm_eps)
        if cfg.use_eau:
            self.eau1 = EvaluatorAdjusterUnit(k, rng)
            self.eau2 = EvaluatorAdjusterUnit(k, rng)
        if cfg.use_grc:
            self.grc1 = GatedResidualConnection(k, rng, cfg.gate_bias_init)
            self.grc2 = GatedResidualConnection(k, rng, cfg.gate_bias_init)
            self.grc3 = GatedResidualConnection(k, rng, cfg.gate_bias_init)
        self.dropout = cfg.dropout

    def __call__(self, y: Tensor, memory: Tensor, self_mask: np.ndarray, cross_mask: np.ndarray,
                 rng=None) -> Tensor:
        s = self.self_attn(y, y, y, self_mask, rng)
        y = self.norm1(_residual(self, 1, y, s, rng))
        s = self.cross_attn(y, memory, memory, cross_mask, rng)
        y = self.norm2(_residual(self, 2, y, s, rng))
        s = self.ffn(y, rng)
        return self.norm3(_residual(self, 3, y, s, rng, eau=False))


def _residual(layer: Module, i: int, r: Tensor, s: Tensor, rng, eau: bool = True) -> Tensor:
    """EAU (after attention only), dropout, then plain or gated add of sublayer ``i``."""
    unit = getattr(layer, f"eau{i}", None) if eau else None
    if unit is not None:
        s = unit(s)
    s = T.dropout(s, layer.dropout, rng)
    gate = getattr(layer, f"grc{i}", None)
    return gate(r, s) if gate is not None else T.add(r, s)


class TransformerModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = rng_stream(cfg.seed, "init", 0)
        k = cfg.model_dim
        self.src_embedding = Tensor(rng.normal(0.0, k ** -0.5, (cfg.src_vocab_size, k)),
                                    requires_grad=True)
        self.tgt_embedding = Tensor(rng.normal(0.0, k ** -0.5, (cfg.tgt_vocab_size, k)),
                                    requires_grad=True)
        self.positional = SinusoidalPositionalEncoding(cfg.max_seq_len, k)
        self.encoder_layers = [EncoderLayer(cfg, rng) for _ in range(cfg.num_layers)]
        self.decoder_layers = [DecoderLayer(cfg, rng) for _ in range(cfg.num_layers)]
        self.generator = LinearLayer(k, cfg.tgt_vocab_size, rng)

    def _embed(self, table: Tensor, ids: np.ndarray, rng) -> Tensor:
        seq = ids.shape[-1]
        if seq > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {seq} exceeds max_seq_len {self.cfg.max_seq_len}")
        x = T.embedding(table, ids)
        if self.cfg.scale_embeddings:
            x = T.scale(x, math.sqrt(self.cfg.model_dim))
        pos = np.broadcast_to(self.positional(seq), x.shape)
        return T.dropout(T.add(x, Tensor(pos)), self.cfg.dropout, rng)

    def encode(self, src_ids: np.ndarray, src_pad_mask: Optional[np.ndarray] = None,
               rng=None) -> Tensor:
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if src_pad_mask is None:
            src_pad_mask = src_ids == PAD_ID
        keys = ~src_pad_mask
        mask = np.broadcast_to(keys[..., None, :], (*src_ids.shape, src_ids.shape[-1]))
        x = self._embed(self.src_embedding, src_ids, rng)
        for layer in self.encoder_layers:
            x = layer(x, mask, rng)
        return x

    def decode(self, memory: Tensor, tgt_ids: np.ndarray, src_pad_mask: np.ndarray,
               rng=None) -> Tensor:
        tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
        t = tgt_ids.shape[-1]
        causal = causal_mask(t)
        cross = np.broadcast_to((~src_pad_mask)[..., None, :],
                                (*tgt_ids.shape, src_pad_mask.shape[-1]))
        y = self._embed(self.tgt_embedding, tgt_ids, rng)
        for layer in self.decoder_layers:
            y = layer(y, memory, causal, cross, rng)
        return self.generator(y)

    def __call__(self, src_ids, tgt_ids, src_pad_mask=None, rng=None) -> Tensor:
        return forward(self, src_ids, tgt_ids, src_pad_mask, rng)


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def build_model(cfg: ModelConfig) -> TransformerModel:
    cfg.validate()
    return TransformerModel(cfg)


def forward(model: TransformerModel, src_ids, tgt_ids, src_pad_mask=None, rng=None) -> Tensor:
    """Teacher-forced logits ``[..., tgt_len, V_tgt]`` for 1-D or batched id arrays."""
    src_ids = np.asarray(src_ids, dtype=np.int64)
    tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
    if src_ids.ndim != tgt_ids.ndim or src_ids.shape[:-1] != tgt_ids.shape[:-1]:
        raise ValueError(f"src {src_ids.shape} and tgt {tgt_ids.shape} batch shapes differ")
    for ids, vocab in ((src_ids, model.cfg.src_vocab_size), (tgt_ids, model.cfg.tgt_vocab_size)):
        if ids.size and (ids.min() < 0 or ids.max() >= vocab):
            raise ValueError(f"token ids must lie in [0, {vocab})")
    if src_pad_mask is None:
        src_pad_mask = src_ids == PAD_ID
    memory = model.encode(src_ids, src_pad_mask, rng)
    return model.decode(memory, tgt_ids, src_pad_mask, rng)


def count_params(model: Module) -> int:
    return model.num_params()


def param_breakdown(model: TransformerModel) -> dict:
    """Totals by component; EAU/GRC totals are also included in the per-layer totals."""
    report = {"embeddings": model.src_embedding.size + model.tgt_embedding.size,
              "generator": model.generator.num_params(),
              "encoder_layers": [layer.num_params() for layer in model.encoder_layers],
              "decoder_layers": [layer.num_params() for layer in model.decoder_layers]}
    eau = grc = 0
    for name, p in model.named_parameters():
        part = name.split(".")
        if len(part) > 2 and part[2].startswith("eau"):
            eau += p.size
        elif len(part) > 2 and part[2].startswith("grc"):
            grc += p.size
    report["eau_total"] = eau
    report["grc_total"] = grc
    report["total"] = count_params(model)
    return report


def expected_variant_delta(num_layers: int, k: int, use_eau: bool = True, use_grc: bool = True) -> int:
    """Extra parameters over the baseline: 3 EAUs and 5 GRCs per encoder+decoder layer pair."""
    return num_layers * (3 * eau_param_count(k) * use_eau + 5 * grc_param_count(k) * use_grc)


def greedy_decode_batch(model: TransformerModel, src_batch: list, max_len: int) -> list:
    """Greedy decoding for several sources at once; each result stops at EOS or max_len."""
    if max_len > model.cfg.max_seq_len:
        raise ValueError(f"max_len {max_len} exceeds max_seq_len {model.cfg.max_seq_len}")
    if not src_batch:
        return []
    width = max(len(s) for s in src_batch)
    src = np.full((len(src_batch), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(src_batch):
        src[i, :len(s)] = s
    pad = src == PAD_ID
    memory = model.encode(src, pad)
    out = np.full((len(src_batch), 1), BOS_ID, dtype=np.int64)
    done = np.zeros(len(src_batch), dtype=bool)
    results: list[list[int]] = [[] for _ in src_batch]
    for _ in range(max_len):
        logits = model.decode(memory, out, pad).data[:, -1, :]
        nxt = logits.argmax(axis=-1)
        for i in np.flatnonzero(~done):
            results[i].append(int(nxt[i]))
            if nxt[i] == EOS_ID:
                done[i] = True
        if done.all():
            break
        out = np.concatenate([out, nxt[:, None]], axis=1)
    return results


def greedy_decode(model: TransformerModel, src_ids, max_len: int) -> list[int]:
    return greedy_decode_batch(model, [list(src_ids)], max_len)[0]
