"""Corpus BLEU (single reference, no smoothing) and token accuracy."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple
    brevity_penalty: float
    candidate_len: int
    reference_len: int

    def format(self) -> str:
        prec = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (f"BLEU = {self.bleu:.3f} {prec} (BP={self.brevity_penalty:.3f}, "
                f"hyp_len={self.candidate_len}, ref_len={self.reference_len}) "
                f"[corpus, 1 ref, no smoothing, greedy]")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> BleuReport:
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise ValueError("BLEU of an empty corpus is undefined")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            cand_counts, ref_counts = _ngrams(cand, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
            totals[n - 1] += sum(cand_counts.values())
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    if c_len == 0:
        bp = 0.0
    else:
        bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    if min(precisions) > 0:
        bleu = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    else:
        bleu = 0.0
    return BleuReport(bleu, precisions, bp, c_len, r_len)


def token_accuracy(logits, targets, pad_id: int = 0) -> float:
    """Fraction of non-pad positions whose argmax equals the target."""
    X = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    y = np.asarray(targets).reshape(-1)
    X = X.reshape(-1, X.shape[-1])
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} logit rows but {y.shape[0]} targets")
    keep = y != pad_id
    if not keep.any():
        raise ValueError("every target is padding")
    return float((X[keep].argmax(axis=1) == y[keep]).mean())
