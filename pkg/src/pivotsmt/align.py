"""IBM Model 1 alignment in both directions and grow-diag-final-and symmetrization.

EM runs on a flattened encoding of the whole bitext: every (source position,
target position) cell of every sentence pair becomes one entry pointing at a
co-occurrence pair id, so the E- and M-steps are a handful of ``bincount`` calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NULL = "<null>"
PROB_FLOOR = 1e-12


class EmptyBitext(ValueError):
    pass


class LengthMismatch(ValueError):
    def __init__(self, line: int, msg: str | None = None):
        self.line = line
        super().__init__(msg or f"parallel inputs differ in length at line {line}")


class DimensionMismatch(ValueError):
    pass


@dataclass
class TranslationTable:
    """Lexical translation probabilities p(tgt | src); ``src_vocab[0]`` is NULL."""

    src_vocab: list
    tgt_vocab: list
    keys: np.ndarray
    values: np.ndarray
    direction: str = "s2t"
    loglik: list = field(default_factory=list)

    def __post_init__(self):
        self.src_index = {w: i for i, w in enumerate(self.src_vocab)}
        self.tgt_index = {w: i for i, w in enumerate(self.tgt_vocab)}
        self._nt = max(len(self.tgt_vocab), 1)

    def lookup(self, src_ids: np.ndarray, tgt_ids: np.ndarray) -> np.ndarray:
        """Probabilities for id grids; negative ids (unknown units) give 0."""
        q = src_ids.astype(np.int64) * self._nt + tgt_ids.astype(np.int64)
        pos = np.searchsorted(self.keys, q)
        pos = np.minimum(pos, len(self.keys) - 1) if len(self.keys) else pos
        out = np.zeros(q.shape)
        if len(self.keys):
            hit = (self.keys[pos] == q) & (src_ids >= 0) & (tgt_ids >= 0)
            out[hit] = self.values[pos[hit]]
        return out

    def prob(self, src: str, tgt: str) -> float:
        s = self.src_index.get(src, -1)
        t = self.tgt_index.get(tgt, -1)
        if s < 0 or t < 0:
            return 0.0
        return float(self.lookup(np.array([s]), np.array([t]))[0])

    @property
    def probs(self) -> dict:
        nt = self._nt
        return {
            (self.src_vocab[k // nt], self.tgt_vocab[k % nt]): float(v)
            for k, v in zip(self.keys.tolist(), self.values)
        }

    def row_sums(self) -> dict:
        sums = np.bincount(self.keys // self._nt, weights=self.values, minlength=len(self.src_vocab))
        return {self.src_vocab[i]: float(s) for i, s in enumerate(sums) if s > 0}


@dataclass(frozen=True)
class AlignmentMatrix:
    links: frozenset
    src_len: int
    tgt_len: int

    def __post_init__(self):
        object.__setattr__(self, "links", frozenset(self.links))
        for i, j in self.links:
            if not (0 <= i < self.src_len and 0 <= j < self.tgt_len):
                raise ValueError(f"link {i}-{j} outside {self.src_len}x{self.tgt_len}")

    def transpose(self) -> "AlignmentMatrix":
        return AlignmentMatrix(frozenset((j, i) for i, j in self.links), self.tgt_len, self.src_len)

    def to_moses(self) -> str:
        return " ".join(f"{i}-{j}" for i, j in sorted(self.links))

    @classmethod
    def from_moses(cls, line: str, src_len: int, tgt_len: int) -> "AlignmentMatrix":
        links = set()
        for tok in line.split():
            i, j = tok.split("-")
            links.add((int(i), int(j)))
        return cls(frozenset(links), src_len, tgt_len)


def check_bitext(src_lines: Sequence, tgt_lines: Sequence) -> None:
    if len(src_lines) != len(tgt_lines):
        raise LengthMismatch(min(len(src_lines), len(tgt_lines)) + 1)


class _Encoded:
    """Flattened cell encoding of a bitext for vectorized EM."""

    def __init__(self, bitext, src_vocab=None, tgt_vocab=None):
        src_index = {NULL: 0}
        tgt_index: dict = {}
        cells, toks, lens = [], [], []
        ntok = 0
        encoded = []
        for src, tgt in bitext:
            s = [0] + [src_index.setdefault(u, len(src_index)) for u in src]
            t = [tgt_index.setdefault(u, len(tgt_index)) for u in tgt]
            encoded.append((s, t))
        self.src_vocab = list(src_index)
        self.tgt_vocab = list(tgt_index)
        nt = max(len(self.tgt_vocab), 1)
        for s, t in encoded:
            if not t:
                continue
            sa = np.asarray(s, dtype=np.int64)
            ta = np.asarray(t, dtype=np.int64)
            cells.append((sa[:, None] * nt + ta[None, :]).ravel())
            toks.append(np.tile(np.arange(ntok, ntok + len(t)), len(s)))
            lens.append(np.full(len(t), len(s), dtype=np.float64))
            ntok += len(t)
        self.ntok = ntok
        if cells:
            keys = np.concatenate(cells)
            self.tok = np.concatenate(toks)
            self.src_plus_null = np.concatenate(lens)
        else:
            keys = np.zeros(0, dtype=np.int64)
            self.tok = np.zeros(0, dtype=np.int64)
            self.src_plus_null = np.zeros(0)
        self.pair_keys, self.pid = np.unique(keys, return_inverse=True)
        self.row = self.pair_keys // nt
        self.nsrc = len(self.src_vocab)


def _normalize_rows(counts: np.ndarray, row: np.ndarray, nrows: int) -> np.ndarray:
    counts = np.maximum(counts, PROB_FLOOR)
    tot = np.bincount(row, weights=counts, minlength=nrows)
    return counts / tot[row]


def train_model1(bitext: Iterable, iterations: int = 5, direction: str = "s2t") -> TranslationTable:
    """EM training of p(tgt unit | src unit) with a NULL source token.

    ``bitext`` yields ``(src_units, tgt_units)`` pairs. The corpus
    log-likelihood under the parameters after ``k`` iterations is stored in
    ``table.loglik[k]``.
    """
    bitext = [(list(s), list(t)) for s, t in bitext]
    if not bitext:
        raise EmptyBitext("bitext is empty")
    enc = _Encoded(bitext)
    npairs = len(enc.pair_keys)
    row_size = np.bincount(enc.row, minlength=enc.nsrc).astype(float)
    probs = 1.0 / row_size[enc.row] if npairs else np.zeros(0)
    const = float(np.log(enc.src_plus_null).sum())
    history = []
    for _ in range(iterations + 1):
        p = probs[enc.pid]
        denom = np.bincount(enc.tok, weights=p, minlength=enc.ntok)
        history.append(float(np.log(denom).sum()) - const if enc.ntok else 0.0)
        if len(history) > iterations:
            break
        post = p / denom[enc.tok]
        counts = np.bincount(enc.pid, weights=post, minlength=npairs)
        probs = _normalize_rows(counts, enc.row, enc.nsrc)
    return TranslationTable(enc.src_vocab, enc.tgt_vocab, enc.pair_keys, probs, direction, history)


def viterbi_align(bitext: Iterable, table: TranslationTable) -> list[AlignmentMatrix]:
    """Link each target position to its most probable source position.

    NULL wins only when strictly more probable than every real source unit;
    ties go to the smallest source index.
    """
    out = []
    for src, tgt in bitext:
        src, tgt = list(src), list(tgt)
        if not tgt or not src:
            out.append(AlignmentMatrix(frozenset(), len(src), len(tgt)))
            continue
        s = np.array([0] + [table.src_index.get(u, -1) for u in src], dtype=np.int64)
        t = np.array([table.tgt_index.get(u, -1) for u in tgt], dtype=np.int64)
        grid = table.lookup(np.repeat(s, len(t)), np.tile(t, len(s))).reshape(len(s), len(t))
        real = grid[1:]
        best = real.argmax(axis=0)
        best_p = real[best, np.arange(len(t))]
        keep = best_p >= grid[0]
        links = frozenset((int(best[j]), j) for j in range(len(t)) if keep[j])
        out.append(AlignmentMatrix(links, len(src), len(tgt)))
    return out


_NEIGHBORS = ((-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def symmetrize_gdfa(fwd: AlignmentMatrix, rev: AlignmentMatrix) -> AlignmentMatrix:
    """grow-diag-final-and over two alignments given in the same (src, tgt) orientation."""
    if (fwd.src_len, fwd.tgt_len) != (rev.src_len, rev.tgt_len):
        raise DimensionMismatch(
            f"alignments are {fwd.src_len}x{fwd.tgt_len} and {rev.src_len}x{rev.tgt_len}; transpose the reverse one first"
        )
    n, m = fwd.src_len, fwd.tgt_len
    union = fwd.links | rev.links
    points = set(fwd.links & rev.links)
    src_aligned = [False] * n
    tgt_aligned = [False] * m
    for i, j in points:
        src_aligned[i] = tgt_aligned[j] = True

    added = True
    while added:
        added = False
        for i, j in sorted(points):
            for di, dj in _NEIGHBORS:
                a, b = i + di, j + dj
                if 0 <= a < n and 0 <= b < m and (a, b) in union and (a, b) not in points:
                    if not src_aligned[a] or not tgt_aligned[b]:
                        points.add((a, b))
                        src_aligned[a] = tgt_aligned[b] = True
                        added = True

    for directional in (fwd.links, rev.links):
        for i, j in sorted(directional):
            if not src_aligned[i] and not tgt_aligned[j]:
                points.add((i, j))
                src_aligned[i] = tgt_aligned[j] = True
    return AlignmentMatrix(frozenset(points), n, m)


def align_bitext(src_sents: Sequence, tgt_sents: Sequence, iterations: int = 5):
    """Train both directions and symmetrize.

    Returns ``(fwd_table, rev_table, fwd_alignments, rev_alignments, sym_alignments)``
    with every alignment in source-by-target orientation.
    """
    check_bitext(src_sents, tgt_sents)
    pairs = [(list(s), list(t)) for s, t in zip(src_sents, tgt_sents)]
    fwd_table = train_model1(pairs, iterations, "s2t")
    rev_table = train_model1([(t, s) for s, t in pairs], iterations, "t2s")
    fwd = viterbi_align(pairs, fwd_table)
    rev = [a.transpose() for a in viterbi_align([(t, s) for s, t in pairs], rev_table)]
    sym = [symmetrize_gdfa(f, r) for f, r in zip(fwd, rev)]
    return fwd_table, rev_table, fwd, rev, sym


def corpus_loglik(bitext: Iterable, table: TranslationTable) -> float:
    """Model 1 log-likelihood of ``bitext`` (natural log) under ``table``."""
    total = 0.0
    for src, tgt in bitext:
        src, tgt = list(src), list(tgt)
        if not tgt:
            continue
        s = np.array([0] + [table.src_index.get(u, -1) for u in src], dtype=np.int64)
        t = np.array([table.tgt_index.get(u, -1) for u in tgt], dtype=np.int64)
        grid = table.lookup(np.repeat(s, len(t)), np.tile(t, len(s))).reshape(len(s), len(t))
        total += float(np.log(grid.sum(axis=0)).sum()) - len(tgt) * math.log(len(s))
    return total
