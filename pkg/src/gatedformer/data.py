"""Tokenization, vocabularies, batching and synthetic copy/reverse tasks."""
from __future__ import annotations

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(line) -> list[str]:
    """Lowercase, isolate punctuation characters, split on whitespace."""
    if isinstance(line, (bytes, bytearray)):
        line = bytes(line).decode("utf-8")  # raises UnicodeDecodeError on bad input
    spaced = "".join(f" {ch} " if _is_punct(ch) else ch for ch in line.lower())
    return spaced.split()


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocab:
    def __init__(self, tokens: Sequence[str], counts: Sequence[int] | None = None, min_freq: int = 1):
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the four special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.counts = list(counts) if counts is not None else [0] * len(self.itos)
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos and self.counts == other.counts

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def save(self, path) -> None:
        lines = [f"{t}\t{c}\n" for t, c in zip(self.itos, self.counts)]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocab:
        tokens, counts = [], []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            token, _, count = line.rpartition("\t")
            tokens.append(token)
            counts.append(int(count))
        return cls(tokens, counts)


def build_vocab(lines: Iterable, min_freq: int = 2) -> Vocab:
    """Specials, then tokens seen ``min_freq`` times, by (count desc, token)."""
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    counter: Counter = Counter()
    for line in lines:
        counter.update(tokenize(line) if isinstance(line, (str, bytes)) else line)
    for s in SPECIALS:
        counter.pop(s, None)
    kept = sorted((t for t, c in counter.items() if c >= min_freq), key=lambda t: (-counter[t], t))
    return Vocab(list(SPECIALS) + kept, [0] * 4 + [counter[t] for t in kept], min_freq)


def encode_sentence(vocab: Vocab, tokens: Sequence[str], add_bos_eos: bool = True) -> list[int]:
    ids = [vocab.id(t) for t in tokens]
    return [BOS_ID] + ids + [EOS_ID] if add_bos_eos else ids


def decode_ids(vocab: Vocab, ids: Sequence[int]) -> list[str]:
    """Inverse of encoding: drops BOS/PAD, stops at EOS."""
    out = []
    for i in ids:
        if i == EOS_ID:
            break
        if i in (BOS_ID, PAD_ID):
            continue
        out.append(vocab.itos[i])
    return out


@dataclass
class Batch:
    src_ids: np.ndarray
    tgt_in_ids: np.ndarray
    tgt_out_ids: np.ndarray
    src_pad_mask: np.ndarray
    tgt_pad_mask: np.ndarray
    causal_mask: np.ndarray

    def __post_init__(self):
        assert self.tgt_in_ids.shape == self.tgt_out_ids.shape
        assert (self.tgt_in_ids[:, 0] == BOS_ID).all()
        assert np.array_equal(self.src_pad_mask, self.src_ids == PAD_ID)
        assert np.array_equal(self.tgt_pad_mask, self.tgt_out_ids == PAD_ID)
        assert (~self.src_pad_mask).any(axis=1).all() and (~self.tgt_pad_mask).any(axis=1).all()

    @property
    def num_tokens(self) -> int:
        return int((~self.tgt_pad_mask).sum())


def make_batch(src_seqs: Sequence[Sequence[int]], tgt_seqs: Sequence[Sequence[int]]) -> Batch:
    """Pad id sequences (without markers) into one batch."""
    src_rows = [[BOS_ID, *s, EOS_ID] for s in src_seqs]
    tgt_in_rows = [[BOS_ID, *t] for t in tgt_seqs]
    tgt_out_rows = [[*t, EOS_ID] for t in tgt_seqs]
    src = _pad(src_rows)
    tgt_in, tgt_out = _pad(tgt_in_rows), _pad(tgt_out_rows)
    n = tgt_in.shape[1]
    return Batch(src, tgt_in, tgt_out, src == PAD_ID, tgt_out == PAD_ID,
                 np.tril(np.ones((n, n), dtype=bool)))


def _pad(rows: list) -> np.ndarray:
    out = np.full((len(rows), max(len(r) for r in rows)), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def make_batches(pairs: Sequence[tuple], vocab_src: Vocab, vocab_tgt: Vocab, batch_size: int,
                 max_len: int, rng: np.random.Generator | None = None) -> tuple[list[Batch], int]:
    """Encode, filter, shuffle and pad token-list pairs.

    Pairs with more than ``max_len - 2`` tokens on either side are dropped;
    returns the batches and the number of dropped pairs.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    kept, dropped = [], 0
    for src, tgt in pairs:
        if len(src) > max_len - 2 or len(tgt) > max_len - 2:
            dropped += 1
            continue
        kept.append((encode_sentence(vocab_src, src, False), encode_sentence(vocab_tgt, tgt, False)))
    if dropped:
        log.info("dropped %d of %d pairs longer than %d tokens", dropped, len(pairs), max_len - 2)
    if not kept:
        raise ValueError("no sentence pairs survive the length filter")
    order = rng.permutation(len(kept)) if rng is not None else np.arange(len(kept))
    batches = []
    for start in range(0, len(kept), batch_size):
        chunk = [kept[i] for i in order[start:start + batch_size]]
        batches.append(make_batch([s for s, _ in chunk], [t for _, t in chunk]))
    return batches, dropped


def synth_copy_task(vocab_size: int, num_pairs: int, len_range: tuple[int, int],
                    rng: np.random.Generator, mode: str = "copy") -> list[tuple[list[str], list[str]]]:
    """Random symbol strings over ``vocab_size - 4`` symbols, paired with a copy or reversal."""
    if vocab_size < 5:
        raise ValueError(f"vocab_size must be >= 5, got {vocab_size}")
    if mode not in ("copy", "reverse"):
        raise ValueError(f"unknown mode {mode!r}")
    lo, hi = len_range
    symbols = [f"s{i}" for i in range(vocab_size - 4)]
    pairs = []
    for _ in range(num_pairs):
        n = int(rng.integers(lo, hi + 1))
        src = [symbols[j] for j in rng.integers(0, len(symbols), n)]
        pairs.append((src, list(src) if mode == "copy" else src[::-1]))
    return pairs


def read_lines(path) -> list[str]:
    return Path(path).read_bytes().decode("utf-8").splitlines()


def read_parallel(src_path, tgt_path) -> list[tuple[list[str], list[str]]]:
    src, tgt = read_lines(src_path), read_lines(tgt_path)
    if len(src) != len(tgt):
        raise ValueError(f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)}")
    return [(tokenize(s), tokenize(t)) for s, t in zip(src, tgt)]

