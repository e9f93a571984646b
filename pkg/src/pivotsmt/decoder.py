"""Monotone phrase-based decoding, n-best extraction and weight tuning.

Search runs left to right over source positions. Stack ``j`` holds hypotheses
covering the first ``j`` source units, recombined on their language-model
state. A stack is filled best-first from ``(hypothesis, option)`` pairs of all
earlier stacks, and at most ``pop_limit`` pairs are expanded into it. With
``pop_limit=None`` every pair is expanded and the search is exact.

All scores are log10. Feature breakdown order: the four phrase-table features,
LM, word penalty (minus the number of target units), phrase penalty (+1 per
phrase) and OOV count.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

from .ngramlm import NGramLM
from .phrasetab import PhraseTable

log = logging.getLogger(__name__)

FEATURE_NAMES = ("phi_ts", "lex_ts", "phi_st", "lex_st", "lm", "word_penalty", "phrase_penalty", "oov")
NFEAT = len(FEATURE_NAMES)
ZERO = (0.0,) * NFEAT


@dataclass
class FeatureWeights:
    phi_ts: float = 0.2
    lex_ts: float = 0.2
    phi_st: float = 0.2
    lex_st: float = 0.2
    lm: float = 0.5
    word_penalty: float = -1.0
    phrase_penalty: float = 0.2
    oov: float = -10.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise ValueError(f"weight {f.name} is not finite")
            setattr(self, f.name, v)

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, n) for n in FEATURE_NAMES)

    @classmethod
    def from_tuple(cls, values: Sequence[float]) -> "FeatureWeights":
        return cls(**dict(zip(FEATURE_NAMES, values)))

    def option_ranking(self) -> tuple:
        """``(table feature weights, weight per target unit)`` giving the decoder's option order."""
        return (self.phi_ts, self.lex_ts, self.phi_st, self.lex_st), -self.word_penalty

    def dot(self, feats: Sequence[float]) -> float:
        return sum(w * f for w, f in zip(self.as_tuple(), feats))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "FeatureWeights":
        with open(path) as f:
            return cls(**json.load(f))


@dataclass
class NBestEntry:
    units: tuple
    score: float
    features: tuple = ZERO


@dataclass
class NBestList:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, k):
        return self.entries[k]

    @property
    def best(self) -> NBestEntry | None:
        return self.entries[0] if self.entries else None

    def to_lines(self, sent_id: int) -> list[str]:
        out = []
        for e in self.entries:
            feats = " ".join(f"{n}= {v:.6g}" for n, v in zip(FEATURE_NAMES, e.features))
            out.append(f"{sent_id} ||| {' '.join(e.units)} ||| {feats} ||| {e.score:.6g}")
        return out


def read_nbest(lines) -> dict:
    """Parse n-best lines into ``{sent_id: NBestList}``."""
    out: dict = {}
    for line in lines:
        if not line.strip():
            continue
        sid, hyp, feats, total = [p.strip() for p in line.split("|||")]
        toks = feats.split()
        vals = tuple(float(toks[k + 1]) for k in range(0, len(toks), 2))
        out.setdefault(int(sid), NBestList()).entries.append(NBestEntry(tuple(hyp.split()), float(total), vals))
    return out


class _Option:
    __slots__ = ("tgt", "feats", "static")

    def __init__(self, tgt, feats, static):
        self.tgt = tgt
        self.feats = feats
        self.static = static


class _Node:
    __slots__ = ("state", "score", "arcs", "D", "cand", "seen")

    def __init__(self, state, score):
        self.state = state
        self.score = score
        self.arcs = []  # (prev node, option, LM log10 prob, delta score)
        self.D = None
        self.cand = None
        self.seen = None


class Decoder:
    """Reusable decoder over one phrase table, language model and weight vector."""

    def __init__(
        self,
        table: PhraseTable,
        lm: NGramLM,
        weights: FeatureWeights | None = None,
        pop_limit: int | None = 1000,
        table_limit: int | None = 20,
        max_phrase_len: int | None = None,
    ):
        if pop_limit is not None and pop_limit < 1:
            raise ValueError("pop_limit must be >= 1 (or None for unbounded)")
        self.table = table
        self.lm = lm
        self.weights = weights or FeatureWeights()
        self.pop_limit = pop_limit
        self.table_limit = table_limit
        self.max_phrase_len = max_phrase_len or max(table.max_phrase_len, 1)
        self._w = self.weights.as_tuple()
        self._lm_cache: dict = {}
        self._opt_cache: dict = {}
        self._feat_cache: dict = {}  # weight-independent, kept across set_weights

    def set_weights(self, weights: FeatureWeights) -> None:
        self.weights = weights
        self._w = weights.as_tuple()
        self._opt_cache.clear()

    # -- options ---------------------------------------------------------

    def _options(self, src: tuple) -> list:
        hit = self._opt_cache.get(src)
        if hit is not None:
            return hit
        w = self._w
        raw = self._feat_cache.get(src)
        if raw is None:
            raw = self._feat_cache[src] = [
                (e.tgt, tuple(math.log10(f) for f in e.features) + (0.0, -float(len(e.tgt)), 1.0, 0.0))
                for e in self.table.get(src)
            ]
        opts = [_Option(tgt, feats, sum(a * b for a, b in zip(w, feats))) for tgt, feats in raw]
        opts.sort(key=lambda o: (-o.static, o.tgt))
        if self.table_limit:
            opts = opts[: self.table_limit]
        self._opt_cache[src] = opts
        return opts

    def _oov_option(self, unit: str) -> _Option:
        feats = (0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 1.0, 1.0)
        return _Option((unit,), feats, sum(a * b for a, b in zip(self._w, feats)))

    def _lm_delta(self, state, tgt):
        key = (state, tgt)
        hit = self._lm_cache.get(key)
        if hit is None:
            total = 0.0
            s = state
            for u in tgt:
                lp, s = self.lm.score(s, u)
                total += lp
            hit = (total, s)
            self._lm_cache[key] = hit
        return hit

    def span_options(self, units: Sequence[str]) -> dict:
        """``{(i, j): [options]}`` for every span with at least one option (OOV copies included)."""
        n = len(units)
        spans = {}
        for i in range(n):
            for j in range(i + 1, min(n, i + self.max_phrase_len) + 1):
                opts = self._options(tuple(units[i:j]))
                if opts:
                    spans[(i, j)] = opts
            if (i, i + 1) not in spans:
                spans[(i, i + 1)] = [self._oov_option(units[i])]
        return spans

    # -- search ----------------------------------------------------------

    def _search(self, units):
        n = len(units)
        w = self._w
        w_lm = w[4]
        spans = self.span_options(units)
        incoming = [[] for _ in range(n + 1)]
        for (i, j), opts in spans.items():
            incoming[j].append((i, opts))
        start = _Node(self.lm.begin(), 0.0)
        stacks = [[start]] + [None] * n
        for j in range(1, n + 1):
            nodes: dict = {}
            heap = []
            seen = set()
            for i, opts in incoming[j]:
                src_stack = stacks[i]
                if src_stack:
                    heap.append((-(src_stack[0].score + opts[0].static), i, 0, 0))
                    seen.add((i, 0, 0))
            heapq.heapify(heap)
            pops = 0
            while heap and (self.pop_limit is None or pops < self.pop_limit):
                _, i, a, b = heapq.heappop(heap)
                pops += 1
                src_stack = stacks[i]
                opts = spans[(i, j)]
                prev, opt = src_stack[a], opts[b]
                lm_lp, new_state = self._lm_delta(prev.state, opt.tgt)
                dscore = opt.static + w_lm * lm_lp
                score = prev.score + dscore
                node = nodes.get(new_state)
                if node is None:
                    node = nodes[new_state] = _Node(new_state, score)
                elif score > node.score:
                    node.score = score
                node.arcs.append((prev, opt, lm_lp, dscore))
                for na, nb in ((a + 1, b), (a, b + 1)):
                    if na < len(src_stack) and nb < len(opts) and (i, na, nb) not in seen:
                        seen.add((i, na, nb))
                        heapq.heappush(heap, (-(src_stack[na].score + opts[nb].static), i, na, nb))
            stacks[j] = sorted(nodes.values(), key=lambda nd: -nd.score)
        final = _Node(None, -math.inf)
        for node in stacks[n]:
            lp = self.lm.end_score(node.state)
            dscore = w_lm * lp
            final.arcs.append((node, None, lp, dscore))
            final.score = max(final.score, node.score + dscore)
        return start, final

    # -- lazy k-best over the recombination lattice ----------------------

    def _kth(self, node, k):
        if node.D is None:
            if not node.arcs:  # start node
                node.D = [(0.0, -1, -1)]
                node.cand = []
            else:
                node.cand = []
                node.seen = set()
                for ai, (prev, _, _, dscore) in enumerate(node.arcs):
                    d = self._kth(prev, 0)
                    if d is not None:
                        node.cand.append((-(d[0] + dscore), ai, 0))
                        node.seen.add((ai, 0))
                heapq.heapify(node.cand)
                node.D = []
        while len(node.D) <= k and node.cand:
            negs, ai, r = heapq.heappop(node.cand)
            node.D.append((-negs, ai, r))
            prev, _, _, dscore = node.arcs[ai]
            if (ai, r + 1) not in node.seen:
                d = self._kth(prev, r + 1)
                if d is not None:
                    node.seen.add((ai, r + 1))
                    heapq.heappush(node.cand, (-(d[0] + dscore), ai, r + 1))
        return node.D[k] if k < len(node.D) else None

    def _path(self, node, k):
        units, opt_feats, lm_total = [], [], 0.0
        while node.arcs:
            score, ai, r = node.D[k]
            prev, opt, lm_lp, _ = node.arcs[ai]
            if opt is not None:
                units.append(opt.tgt)
                opt_feats.append(opt.feats)
            lm_total += lm_lp
            node, k = prev, r
        out = []
        for tgt in reversed(units):
            out.extend(tgt)
        feats = [sum(col) for col in zip(*opt_feats)] if opt_feats else list(ZERO)
        feats[4] = lm_total
        return tuple(out), tuple(feats)

    def decode(self, units: Sequence[str], nbest: int = 1, max_derivations: int | None = None) -> NBestList:
        units = list(units)
        if not units:
            return NBestList([NBestEntry((), 0.0, ZERO)])
        _, final = self._search(units)
        if not final.arcs:
            return NBestList()
        limit = max_derivations or max(nbest * 20, 50)
        result, surfaces = [], set()
        k = 0
        while len(result) < nbest and k < limit:
            d = self._kth(final, k)
            if d is None:
                break
            surf, feats = self._path(final, k)
            if surf not in surfaces:
                surfaces.add(surf)
                result.append(NBestEntry(surf, d[0], feats))
            k += 1
        return NBestList(result)

    def translate(self, units: Sequence[str]) -> tuple:
        best = self.decode(units, 1).best
        return best.units if best else ()


def decode(
    sentence,
    table: PhraseTable,
    lm: NGramLM,
    w: FeatureWeights | None = None,
    pop_limit: int | None = 1000,
    nbest: int = 1,
    table_limit: int | None = 20,
) -> NBestList:
    units = sentence.units if hasattr(sentence, "units") else sentence
    return Decoder(table, lm, w, pop_limit, table_limit).decode(units, nbest)


# ---------------------------------------------------------------------------
# tuning


def tune_weights(
    dev_src: Sequence[Sequence[str]],
    dev_refs: Sequence[str],
    initial: FeatureWeights,
    decoder: Decoder,
    postprocess: Callable[[Sequence[str]], str],
    *,
    iterations: int = 5,
    nbest: int = 20,
    sentence_stats: Callable | None = None,
    steps: Sequence[float] = (-1.0, -0.5, -0.2, -0.1, 0.1, 0.2, 0.5, 1.0),
    restarts: int = 5,
    seed: int = 0,
) -> FeatureWeights:
    """Coordinate search on an accumulated n-best pool, optimizing word-level BLEU.

    Every hypothesis goes through ``postprocess`` (desegmentation) before it is
    scored, so subword systems are tuned on words. ``sentence_stats`` maps
    ``(hypothesis words, reference words)`` to BLEU sufficient statistics and
    defaults to :func:`pivotsmt.evalmetrics.sentence_stats`. Each iteration
    climbs from the current point and from ``restarts`` seeded random points,
    then re-decodes the dev set to grow the pool. The result is the weight
    vector with the best real dev BLEU; ``initial`` is kept unless beaten.
    """
    import numpy as np

    from .evalmetrics import bleu_from_stats, sentence_stats as _default_stats

    stats_fn = sentence_stats or _default_stats
    if len(dev_src) != len(dev_refs):
        raise ValueError("dev source and reference differ in length")
    rng = np.random.default_rng(seed)

    pool_feats = [[] for _ in dev_src]
    pool_stats = [[] for _ in dev_src]
    pool_seen = [set() for _ in dev_src]

    def decode_dev(weights, k):
        decoder.set_weights(weights)
        return [decoder.decode(list(s), k) for s in dev_src]

    def add_to_pool(lists):
        for sid, nb in enumerate(lists):
            for e in nb:
                if e.units in pool_seen[sid]:
                    continue
                pool_seen[sid].add(e.units)
                pool_feats[sid].append(e.features)
                pool_stats[sid].append(stats_fn(postprocess(e.units), dev_refs[sid]))

    def real_bleu(lists):
        total = None
        for sid, nb in enumerate(lists):
            hyp = postprocess(nb.best.units) if nb.best else ""
            st = np.asarray(stats_fn(hyp, dev_refs[sid]), dtype=float)
            total = st if total is None else total + st
        return bleu_from_stats(total)

    def pool_arrays():
        keep = [k for k, f in enumerate(pool_feats) if f]
        m = max(len(pool_feats[k]) for k in keep)
        nstat = len(pool_stats[keep[0]][0])
        F = np.zeros((len(keep), m, NFEAT))
        S = np.zeros((len(keep), m, nstat))
        valid = np.zeros((len(keep), m), dtype=bool)
        for r, k in enumerate(keep):
            n = len(pool_feats[k])
            F[r, :n] = np.asarray(pool_feats[k], dtype=float)
            S[r, :n] = np.asarray(pool_stats[k], dtype=float)
            valid[r, :n] = True
        return F, S, valid

    def climb(start, F, S, valid):
        rows = np.arange(len(F))

        def score(w):
            sc = np.where(valid, F @ w, -np.inf)
            return bleu_from_stats(S[rows, np.argmax(sc, axis=1)].sum(axis=0))

        cur, best = start.copy(), score(start)
        improved = True
        while improved:
            improved = False
            for d in range(NFEAT):
                scale = max(1.0, abs(cur[d]))
                for step in steps:
                    cand = cur.copy()
                    cand[d] += step * scale
                    b = score(cand)
                    if b > best + 1e-9:
                        best, cur, improved = b, cand, True
        return best, cur

    lists = decode_dev(initial, nbest)
    initial_bleu = best_real = real_bleu(lists)
    best_weights = initial
    add_to_pool(lists)
    current = np.array(initial.as_tuple())
    for it in range(iterations):
        if not any(pool_feats):
            break
        F, S, valid = pool_arrays()
        starts = [current]
        for _ in range(restarts):
            r = rng.uniform(-1.0, 1.0, NFEAT)
            r[-1] = current[-1]  # the OOV penalty stays put
            starts.append(r)
        pool_best, point = climb(current, F, S, valid)
        for s0 in starts[1:]:
            b, p = climb(s0, F, S, valid)
            if b > pool_best + 1e-9:
                pool_best, point = b, p
        log.info("tuning iteration %d: pool BLEU %.2f", it, pool_best)
        if np.array_equal(point, current):
            break
        current = point
        weights = FeatureWeights.from_tuple(current.tolist())
        lists = decode_dev(weights, nbest)
        b = real_bleu(lists)
        if b > best_real + 1e-9:
            best_real, best_weights = b, weights
        add_to_pool(lists)

    log.info("tuning: dev BLEU %.2f -> %.2f", initial_bleu, best_real)
    decoder.set_weights(best_weights)
    return best_weights
