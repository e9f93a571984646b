"""Interpolated Kneser-Ney n-gram language models with ARPA import/export.

One discount per order, ``D = n1 / (n1 + 2 n2)`` over the adjusted counts of
that order. Lower orders use continuation counts except for n-grams that start
with the sentence-begin symbol. Probabilities are stored in back-off form
(log10), so scoring follows the usual ARPA chain.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
NO_PROB = -99.0


class EmptyCorpus(ValueError):
    pass


def _fmt(x: float) -> str:
    return f"{x:.8g}"


class NGramLM:
    """Back-off n-gram model over integer-coded units.

    ``prob`` maps an id tuple to log10 p(last | rest); ``bow`` maps a context
    tuple to its log10 back-off weight. A state is the longest suffix of the
    history that is still a context in the model, so equal states always have
    equal continuation distributions.
    """

    def __init__(self, order: int, vocab: Sequence[str], prob: dict, bow: dict):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.prob = prob
        self.bow = bow
        self.unk = self.index[UNK]
        self.bos = self.index[BOS]
        self.eos = self.index[EOS]

    # -- scoring ---------------------------------------------------------

    def begin(self) -> tuple:
        return self._minimize((self.bos,))

    def _minimize(self, hist: tuple) -> tuple:
        if self.order == 1:
            return ()
        hist = hist[-(self.order - 1):]
        while hist and hist not in self.bow:
            hist = hist[1:]
        return hist

    def word_id(self, unit: str) -> int:
        return self.index.get(unit, self.unk)

    def score_id(self, state: tuple, w: int) -> tuple:
        acc = 0.0
        ctx = state
        while True:
            p = self.prob.get(ctx + (w,))
            if p is not None:
                break
            acc += self.bow.get(ctx, 0.0)
            if not ctx:
                p = NO_PROB
                break
            ctx = ctx[1:]
        return acc + p, self._minimize(state + (w,))

    def score(self, state: tuple, unit: str) -> tuple:
        """``(log10 p(unit | state), next_state)``; unknown units score as ``<unk>``."""
        return self.score_id(state, self.word_id(unit))

    def end_score(self, state: tuple) -> float:
        return self.score_id(state, self.eos)[0]

    def sentence_logprob(self, units: Iterable[str], bos: bool = True, eos: bool = True) -> float:
        state = self.begin() if bos else ()
        total = 0.0
        for u in units:
            lp, state = self.score(state, u)
            total += lp
        if eos:
            total += self.end_score(state)
        return total

    def perplexity(self, sentences: Iterable[Sequence[str]]) -> float:
        total, n = 0.0, 0
        for s in sentences:
            s = list(s)
            total += self.sentence_logprob(s)
            n += len(s) + 1
        return 10 ** (-total / n) if n else float("inf")

    def predictive_vocab(self) -> list:
        """Every unit the model can predict (all but the begin symbol)."""
        return [i for i in range(len(self.vocab)) if i != self.bos]

    # -- ARPA ------------------------------------------------------------

    def to_arpa(self) -> str:
        by_order = defaultdict(list)
        for g, p in self.prob.items():
            by_order[len(g)].append((tuple(self.vocab[i] for i in g), g, p))
        lines = ["", "\\data\\"]
        for n in range(1, self.order + 1):
            lines.append(f"ngram {n}={len(by_order[n])}")
        for n in range(1, self.order + 1):
            lines.append("")
            lines.append(f"\\{n}-grams:")
            for words, g, p in sorted(by_order[n]):
                row = f"{_fmt(p)}\t{' '.join(words)}"
                if n < self.order and g in self.bow:
                    row += f"\t{_fmt(self.bow[g])}"
                lines.append(row)
        lines.append("")
        lines.append("\\end\\")
        return "\n".join(lines) + "\n"

    def write_arpa(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_arpa())

    @classmethod
    def from_arpa(cls, text: str) -> "NGramLM":
        order = 0
        section = 0
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line == "\\data\\":
                continue
            if line.startswith("ngram "):
                order = max(order, int(line[6:].split("=")[0]))
                continue
            if line.startswith("\\") and line.endswith("-grams:"):
                section = int(line[1:].split("-")[0])
                continue
            if line == "\\end\\":
                break
            parts = line.split("\t")
            if len(parts) == 1:
                parts = line.split()
                p, words = float(parts[0]), parts[1 : 1 + section]
                b = float(parts[1 + section]) if len(parts) > 1 + section else None
            else:
                p, words = float(parts[0]), parts[1].split()
                b = float(parts[2]) if len(parts) > 2 else None
            rows.append((words, p, b))
        vocab = [UNK, BOS, EOS]
        seen = set(vocab)
        for words, _, _ in rows:
            if len(words) == 1 and words[0] not in seen:
                seen.add(words[0])
                vocab.append(words[0])
        index = {w: i for i, w in enumerate(vocab)}
        prob, bow = {}, {}
        for words, p, b in rows:
            g = tuple(index[w] for w in words)
            prob[g] = p
            if b is not None:
                bow[g] = b
        return cls(order, vocab, prob, bow)

    @classmethod
    def read_arpa(cls, path) -> "NGramLM":
        with open(path, encoding="utf-8") as f:
            return cls.from_arpa(f.read())


def _discount(counts: dict, order: int) -> float:
    coc = Counter(c for c in counts.values() if c in (1, 2))
    n1, n2 = coc[1], coc[2]
    if n1 == 0 or n2 == 0:
        log.info("order %d: degenerate count-of-counts (n1=%d, n2=%d), using D=0.5", order, n1, n2)
        return 0.5
    return n1 / (n1 + 2 * n2)


def train_lm(corpus: Iterable[Sequence[str]], order: int) -> NGramLM:
    """Train an interpolated Kneser-Ney model of the given order.

    ``corpus`` yields unit sequences (already segmented). Each sentence is
    wrapped in one begin and one end symbol.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    vocab = [UNK, BOS, EOS]
    index = {w: i for i, w in enumerate(vocab)}
    bos, eos = index[BOS], index[EOS]
    raw = [None] + [Counter() for _ in range(order)]
    nsent = 0
    for sent in corpus:
        ids = [bos]
        for u in sent:
            i = index.get(u)
            if i is None:
                i = index[u] = len(vocab)
                vocab.append(u)
            ids.append(i)
        ids.append(eos)
        nsent += 1
        t = tuple(ids)
        L = len(t)
        for n in range(1, order + 1):
            c = raw[n]
            for k in range(L - n + 1):
                c[t[k : k + n]] += 1
    if nsent == 0:
        raise EmptyCorpus("cannot train a language model on an empty corpus")

    # adjusted counts
    adj = [None] * (order + 1)
    adj[order] = dict(raw[order])
    for n in range(order - 1, 0, -1):
        cont: Counter = Counter()
        for g in raw[n + 1]:
            cont[g[1:]] += 1
        a = {}
        for g, c in raw[n].items():
            a[g] = c if g[0] == bos else cont.get(g, 0)
        adj[n] = a
    adj[1].pop((bos,), None)

    prob: dict = {}
    bow: dict = {}
    V = len(vocab) - 1  # predictive vocabulary excludes <s>
    lower_p = {}  # order n-1 interpolated probabilities (linear)
    for n in range(1, order + 1):
        a = {g: c for g, c in adj[n].items() if c > 0}
        D = _discount(a, n)
        denom: Counter = Counter()
        types: Counter = Counter()
        for g, c in a.items():
            h = g[:-1]
            denom[h] += c
            types[h] += 1
        gamma = {h: D * types[h] / denom[h] for h in denom}
        cur = {}
        if n == 1:
            base = 1.0 / V
            for w in range(len(vocab)):
                if w == bos:
                    continue
                g = (w,)
                c = a.get(g, 0)
                p = max(c - D, 0.0) / denom[()] + gamma[()] * base
                cur[g] = p
        else:
            for g, c in a.items():
                h = g[:-1]
                p = (c - D) / denom[h] + gamma[h] * lower_p[g[1:]]
                cur[g] = p
            for h, gm in gamma.items():
                bow[h] = math.log10(gm)
        for g, p in cur.items():
            prob[g] = math.log10(p)
        lower_p = cur
    prob[(bos,)] = NO_PROB
    return NGramLM(order, vocab, prob, bow)
