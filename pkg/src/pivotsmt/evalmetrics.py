"""Corpus BLEU, LeBLEU-style soft-match BLEU and paired bootstrap significance."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from rapidfuzz.distance import Levenshtein

MAX_ORDER = 4


class LengthMismatch(ValueError):
    pass


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[k : k + n]) for k in range(len(words) - n + 1))


@dataclass
class BleuStats:
    matches: list
    counts: list
    cand_len: int = 0
    ref_len: int = 0

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            [a + b for a, b in zip(self.matches, other.matches)],
            [a + b for a, b in zip(self.counts, other.counts)],
            self.cand_len + other.cand_len,
            self.ref_len + other.ref_len,
        )

    def as_array(self) -> np.ndarray:
        return np.array(list(self.matches) + list(self.counts) + [self.cand_len, self.ref_len], dtype=float)

    @property
    def score(self) -> float:
        return bleu_from_stats(self.as_array())


def sentence_stats(candidate: str, reference: str, max_order: int = MAX_ORDER) -> np.ndarray:
    """Flat sufficient statistics ``[matches_1..N, counts_1..N, cand_len, ref_len]``."""
    c, r = candidate.split(), reference.split()
    matches, counts = [], []
    for n in range(1, max_order + 1):
        cn, rn = _ngrams(c, n), _ngrams(r, n)
        matches.append(sum(min(v, rn[g]) for g, v in cn.items()))
        counts.append(max(len(c) - n + 1, 0))
    return np.array(matches + counts + [len(c), len(r)], dtype=float)


def bleu_from_stats(stats, max_order: int = MAX_ORDER) -> float:
    stats = np.asarray(stats, dtype=float)
    matches, counts = stats[:max_order], stats[max_order : 2 * max_order]
    c, r = stats[2 * max_order], stats[2 * max_order + 1]
    if c == 0 or np.any(matches <= 0) or np.any(counts <= 0):
        return 0.0
    log_prec = float(np.mean(np.log(matches / counts)))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_prec)


def corpus_stats(candidates: Sequence[str], references: Sequence[str], max_order: int = MAX_ORDER) -> np.ndarray:
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidate lines vs {len(references)} reference lines")
    total = np.zeros(2 * max_order + 2)
    for c, r in zip(candidates, references):
        total += sentence_stats(c, r, max_order)
    return total


def bleu(candidates: Sequence[str], references: Sequence[str], max_order: int = MAX_ORDER) -> float:
    """Corpus BLEU on whitespace-tokenized word lines, in [0, 100]."""
    return bleu_from_stats(corpus_stats(candidates, references, max_order), max_order)


# ---------------------------------------------------------------------------
# soft matching


def _credit(a: str, b: str) -> float:
    if a == b:
        return 1.0
    m = max(len(a), len(b))
    return 1.0 - Levenshtein.distance(a, b) / m if m else 1.0


def _soft_matches(cand: list, ref: list, threshold: float) -> float:
    """Greedy best-credit assignment of candidate to reference n-grams, no reuse."""
    pairs = []
    for ci, c in enumerate(cand):
        for ri, r in enumerate(ref):
            if c == r:
                pairs.append((1.0, ci, ri))
                continue
            m = max(len(c), len(r))
            if m == 0 or 1.0 - abs(len(c) - len(r)) / m < threshold:
                continue
            cr = _credit(c, r)
            if cr >= threshold:
                pairs.append((cr, ci, ri))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_c, used_r = set(), set()
    total = 0.0
    for cr, ci, ri in pairs:
        if ci in used_c or ri in used_r:
            continue
        used_c.add(ci)
        used_r.add(ri)
        total += cr
    return total


def lebleu_stats(candidate: str, reference: str, threshold: float = 0.4, max_order: int = MAX_ORDER) -> np.ndarray:
    c, r = candidate.split(), reference.split()
    matches, counts = [], []
    for n in range(1, max_order + 1):
        cg = [" ".join(c[k : k + n]) for k in range(len(c) - n + 1)]
        rg = [" ".join(r[k : k + n]) for k in range(len(r) - n + 1)]
        matches.append(_soft_matches(cg, rg, threshold))
        counts.append(len(cg))
    return np.array(matches + counts + [len(c), len(r)], dtype=float)


def lebleu(
    candidates: Sequence[str], references: Sequence[str], threshold: float = 0.4, max_order: int = MAX_ORDER
) -> float:
    """BLEU with fractional n-gram credit ``1 - edit distance / length``, in [0, 1].

    N-grams are compared as space-joined strings; a pair earns credit only
    when the credit reaches ``threshold``.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidate lines vs {len(references)} reference lines")
    total = np.zeros(2 * max_order + 2)
    for c, r in zip(candidates, references):
        total += lebleu_stats(c, r, threshold, max_order)
    return bleu_from_stats(total, max_order) / 100.0


# ---------------------------------------------------------------------------
# significance


@dataclass
class SignificanceReport:
    score_a: float
    score_b: float
    p_value: float
    resamples: int
    seed: int | None = None

    def to_kv(self) -> str:
        return (
            f"score_a={self.score_a:.4f}\nscore_b={self.score_b:.4f}\n"
            f"p_value={self.p_value:.4f}\nresamples={self.resamples}\n"
        )


def bootstrap_significance(
    sys_a: Sequence[str], sys_b: Sequence[str], refs: Sequence[str], resamples: int = 1000, seed: int = 0
) -> SignificanceReport:
    """Paired bootstrap: fraction of resampled test sets on which the observed winner fails to win."""
    if not (len(sys_a) == len(sys_b) == len(refs)):
        raise LengthMismatch("system outputs and references must have the same number of lines")
    if resamples < 1:
        raise ValueError("resamples must be positive")
    sa = np.array([sentence_stats(c, r) for c, r in zip(sys_a, refs)]).reshape(len(refs), -1)
    sb = np.array([sentence_stats(c, r) for c, r in zip(sys_b, refs)]).reshape(len(refs), -1)
    score_a = bleu_from_stats(sa.sum(axis=0))
    score_b = bleu_from_stats(sb.sum(axis=0))
    if score_a == score_b or len(refs) == 0:
        return SignificanceReport(score_a, score_b, 1.0, resamples, seed)
    winner, loser = (sa, sb) if score_a > score_b else (sb, sa)
    rng = np.random.default_rng(seed)
    fails = 0
    n = len(refs)
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        if bleu_from_stats(winner[idx].sum(axis=0)) <= bleu_from_stats(loser[idx].sum(axis=0)):
            fails += 1
    return SignificanceReport(score_a, score_b, fails / resamples, resamples, seed)
