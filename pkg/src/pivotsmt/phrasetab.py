"""Phrase-pair extraction, relative-frequency scoring and the phrase-table file format.

Table lines use the Moses-style layout::

    src ||| tgt ||| phi_ts lex_ts phi_st lex_st ||| i-j ... ||| joint src_count tgt_count

where ``phi_ts`` is P(tgt|src) and ``phi_st`` is P(src|tgt).
"""

from __future__ import annotations

import gzip
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .align import NULL, PROB_FLOOR, AlignmentMatrix, TranslationTable

DEFAULT_MAX_LEN = {"word": 7, "char": 10, "os": 10, "bpe": 10}
PRUNE_FLOOR = 1e-7
SEP = " ||| "


class EmptyTable(ValueError):
    pass


class DuplicateEntry(ValueError):
    pass


@dataclass(slots=True)
class PhraseEntry:
    src: tuple
    tgt: tuple
    phi_tgt_given_src: float
    lex_tgt_given_src: float
    phi_src_given_tgt: float
    lex_src_given_tgt: float
    alignment: tuple = ()
    joint_count: float = 0.0
    src_count: float = 0.0
    tgt_count: float = 0.0

    @property
    def features(self) -> tuple:
        return (self.phi_tgt_given_src, self.lex_tgt_given_src, self.phi_src_given_tgt, self.lex_src_given_tgt)

    @property
    def key(self) -> tuple:
        return (self.src, self.tgt)

    def to_line(self) -> str:
        feats = " ".join(f"{v:.6g}" for v in self.features)
        links = " ".join(f"{i}-{j}" for i, j in self.alignment)
        counts = f"{self.joint_count:.6g} {self.src_count:.6g} {self.tgt_count:.6g}"
        return SEP.join((" ".join(self.src), " ".join(self.tgt), feats, links, counts))

    @classmethod
    def from_line(cls, line: str) -> "PhraseEntry":
        parts = line.rstrip("\n").split(" |||")
        parts = [p.strip() for p in parts]
        if len(parts) < 3:
            raise ValueError(f"malformed phrase-table line: {line!r}")
        src, tgt, feats = parts[0].split(), parts[1].split(), [float(x) for x in parts[2].split()]
        if len(feats) != 4:
            raise ValueError(f"expected 4 features, got {len(feats)}: {line!r}")
        links: tuple = ()
        if len(parts) > 3 and parts[3]:
            links = tuple(tuple(int(x) for x in tok.split("-")) for tok in parts[3].split())
        counts = [0.0, 0.0, 0.0]
        if len(parts) > 4 and parts[4]:
            counts = [float(x) for x in parts[4].split()] + [0.0] * 3
        return cls(tuple(src), tuple(tgt), *feats, links, *counts[:3])


@dataclass
class PhraseTable:
    entries: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self._keys = {(e.src, e.tgt) for lst in self.entries.values() for e in lst}
        self._n = len(self._keys)

    def add(self, entry: PhraseEntry) -> None:
        k = (entry.src, entry.tgt)
        if k in self._keys:
            raise DuplicateEntry(f"duplicate phrase pair {' '.join(entry.src)} ||| {' '.join(entry.tgt)}")
        self._keys.add(k)
        self.entries.setdefault(entry.src, []).append(entry)
        self._n += 1

    def __len__(self) -> int:
        return self._n

    def __iter__(self) -> Iterator[PhraseEntry]:
        for src in self.entries:
            yield from self.entries[src]

    def __contains__(self, key) -> bool:
        return key in self._keys

    def get(self, src) -> list:
        return self.entries.get(tuple(src), [])

    def lookup(self) -> dict:
        return {(e.src, e.tgt): e for e in self}

    def sorted_entries(self) -> list:
        return sorted(self, key=lambda e: (e.src, e.tgt))

    @property
    def scheme(self):
        return self.metadata.get("scheme")

    @property
    def max_phrase_len(self) -> int:
        return max((len(s) for s in self.entries), default=0)

    def stats(self) -> dict:
        src_units, tgt_units, tgt_phrases = set(), set(), set()
        for e in self:
            src_units.update(e.src)
            tgt_units.update(e.tgt)
            tgt_phrases.add(e.tgt)
        return {
            "entries": len(self),
            "src_phrases": len(self.entries),
            "tgt_phrases": len(tgt_phrases),
            "src_unit_vocab": len(src_units),
            "tgt_unit_vocab": len(tgt_units),
        }

    def write(self, path) -> None:
        path = Path(path)
        data = "".join(e.to_line() + "\n" for e in self.sorted_entries()).encode("utf-8")
        if path.suffix == ".gz":
            # fixed header fields keep the bytes reproducible
            with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, compresslevel=6, mtime=0) as f:
                f.write(data)
        else:
            path.write_bytes(data)
        meta = dict(self.metadata, entries=len(self))
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")

    @classmethod
    def read(cls, path) -> "PhraseTable":
        path = Path(path)
        opener = gzip.open if path.suffix == ".gz" else open
        table = cls()
        with opener(path, "rt", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    table.add(PhraseEntry.from_line(line))
        meta_path = Path(str(path) + ".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            meta.pop("entries", None)
            table.metadata = meta
        return table


# ---------------------------------------------------------------------------
# extraction


def extract_sentence(src_len: int, tgt_len: int, links, max_phrase_len: int = 7):
    """Alignment-consistent blocks of one sentence pair.

    Yields ``(s_start, s_end, t_start, t_end, internal_links)`` with inclusive
    ends and links relative to the block corner. Unaligned target units at the
    block edges produce the usual extended variants.
    """
    by_src = defaultdict(list)
    by_tgt = defaultdict(list)
    for i, j in links:
        by_src[i].append(j)
        by_tgt[j].append(i)
    tgt_aligned = [j in by_tgt for j in range(tgt_len)]
    L = max_phrase_len
    for e1 in range(src_len):
        fmin, fmax = tgt_len, -1
        for e2 in range(e1, min(src_len, e1 + L)):
            for j in by_src.get(e2, ()):
                fmin = min(fmin, j)
                fmax = max(fmax, j)
            if fmax < 0:
                continue
            if fmax - fmin + 1 > L:
                break
            if any(i < e1 or i > e2 for j in range(fmin, fmax + 1) for i in by_tgt.get(j, ())):
                continue
            # consistency puts every link of the source span inside the block
            block = sorted((i - e1, j) for i in range(e1, e2 + 1) for j in by_src.get(i, ()))
            fs = fmin
            while fs >= 0 and fmax - fs + 1 <= L:
                inner = tuple((i, j - fs) for i, j in block)
                fe = fmax
                while fe < tgt_len and fe - fs + 1 <= L:
                    yield e1, e2, fs, fe, inner
                    fe += 1
                    if fe >= tgt_len or tgt_aligned[fe]:
                        break
                fs -= 1
                if fs < 0 or tgt_aligned[fs]:
                    break


def extract_phrases(bitext: Iterable, alignments: Iterable, max_phrase_len: int = 7):
    """Stream ``(src_phrase, tgt_phrase, internal_links)`` over a whole bitext."""
    if max_phrase_len < 1:
        raise ValueError("max_phrase_len must be >= 1")
    for (src, tgt), al in zip(bitext, alignments):
        src, tgt = tuple(src), tuple(tgt)
        links = al.links if isinstance(al, AlignmentMatrix) else al
        for e1, e2, f1, f2, inner in extract_sentence(len(src), len(tgt), links, max_phrase_len):
            yield src[e1 : e2 + 1], tgt[f1 : f2 + 1], inner


# ---------------------------------------------------------------------------
# scoring


def _lex_weight(src: tuple, tgt: tuple, links: tuple, w: dict) -> float:
    """prod_j of the mean w(t_j|s_i) over units linked to t_j, or w(t_j|NULL) if unlinked."""
    linked = defaultdict(list)
    for i, j in links:
        linked[j].append(i)
    total = 1.0
    for j, t in enumerate(tgt):
        if j in linked:
            srcs = linked[j]
            total *= sum(w.get((src[i], t), PROB_FLOOR) for i in srcs) / len(srcs)
        else:
            total *= w.get((NULL, t), PROB_FLOOR)
    return max(total, PROB_FLOOR)


def _as_dict(table) -> dict:
    if table is None:
        return {}
    return table.probs if isinstance(table, TranslationTable) else dict(table)


class _PairStats:
    __slots__ = ("count", "lex_ts", "lex_st", "variants")

    def __init__(self):
        self.count = 0
        self.lex_ts = 0.0
        self.lex_st = 0.0
        self.variants = {}


def _table_from_stats(stats: dict, prune_floor: float, metadata: dict | None) -> PhraseTable:
    src_tot: Counter = Counter()
    tgt_tot: Counter = Counter()
    for (src, tgt), st in stats.items():
        src_tot[src] += st.count
        tgt_tot[tgt] += st.count
    table = PhraseTable(metadata=dict(metadata or {}))
    for (src, tgt), st in stats.items():
        c = st.count
        if len(st.variants) == 1:
            best_links = next(iter(st.variants))
        else:
            best_links = min(st.variants.items(), key=lambda v: (-v[1], v[0]))[0]
        e = PhraseEntry(
            src, tgt, c / src_tot[src], st.lex_ts, c / tgt_tot[tgt], st.lex_st, best_links, float(c),
            float(src_tot[src]), float(tgt_tot[tgt]),
        )
        if max(e.features) < prune_floor:
            continue
        table.add(e)
    return table


def score_phrases(
    pairs: Iterable,
    lex_fwd=None,
    lex_rev=None,
    prune_floor: float = PRUNE_FLOOR,
    metadata: dict | None = None,
) -> PhraseTable:
    """Score extracted pairs into a phrase table.

    ``lex_fwd`` holds p(tgt unit | src unit) and ``lex_rev`` p(src unit | tgt
    unit), each with a NULL row. Phrase probabilities are relative frequencies;
    a pair seen with several internal alignments keeps the most frequent one
    and the maximum lexical weight over all of them. Entries whose four
    features all fall below ``prune_floor`` are dropped.
    """
    wf, wr = _as_dict(lex_fwd), _as_dict(lex_rev)
    stats: dict = {}
    for src, tgt, links in pairs:
        src, tgt, links = tuple(src), tuple(tgt), tuple(links)
        st = stats.get((src, tgt))
        if st is None:
            st = stats[(src, tgt)] = _PairStats()
        st.count += 1
        if links in st.variants:
            st.variants[links] += 1
            continue
        st.variants[links] = 1
        if wf:
            lex_ts = _lex_weight(src, tgt, links, wf)
            lex_st = _lex_weight(tgt, src, tuple((j, i) for i, j in links), wr)
        else:
            lex_ts = lex_st = 1.0
        st.lex_ts = max(st.lex_ts, lex_ts)
        st.lex_st = max(st.lex_st, lex_st)
    return _table_from_stats(stats, prune_floor, metadata)


def build_phrase_table(
    src_sents: Sequence, tgt_sents: Sequence, alignments: Sequence, lex_fwd, lex_rev,
    max_phrase_len: int = 7, prune_floor: float = PRUNE_FLOOR, metadata: dict | None = None,
) -> PhraseTable:
    """Extract and score a whole bitext; same result as ``score_phrases(extract_phrases(...))``."""
    arrays = build_phrase_arrays(
        src_sents, tgt_sents, alignments, lex_fwd, lex_rev, max_phrase_len, prune_floor, metadata
    )
    return arrays.to_table()


def table_size_ratio(triangulated: PhraseTable, comp_sp: PhraseTable, comp_pt: PhraseTable) -> float:
    """Entry count of the triangulated table over the larger component's.

    A triangulated table filtered to some source phrases still reports the
    size of the full join (``metadata["joined_entries"]``).
    """
    size = int(triangulated.metadata.get("joined_entries", len(triangulated)))
    denom = max(len(comp_sp), len(comp_pt))
    if size == 0 or denom == 0:
        raise EmptyTable("size ratio needs non-empty tables")
    return size / denom


def limit_table(table: PhraseTable, limit: int | None, weights=None) -> PhraseTable:
    """Keep the ``limit`` best targets per source phrase (by weighted log features)."""
    if not limit:
        return table
    weights = weights or (1.0, 1.0, 1.0, 1.0)
    out = PhraseTable(metadata=dict(table.metadata))
    for src, lst in table.entries.items():
        ranked = sorted(
            lst,
            key=lambda e: (-sum(w * math.log10(f) for w, f in zip(weights, e.features)), e.tgt),
        )
        for e in ranked[:limit]:
            out.add(e)
    return out


# ---------------------------------------------------------------------------
# columnar tables


SIG_BITS = 62  # link bits per signature word


@dataclass
class PhraseArrays:
    """Column-oriented phrase table for corpus-scale work.

    Row ``k`` pairs ``src_phrases[src[k]]`` with ``tgt_phrases[tgt[k]]``;
    ``features`` and ``counts`` follow the :class:`PhraseEntry` field order and
    ``align[k]`` indexes ``align_vocab``. Phrase lists may hold phrases that no
    row uses.
    """

    src_phrases: list
    tgt_phrases: list
    src: np.ndarray
    tgt: np.ndarray
    features: np.ndarray
    counts: np.ndarray
    align: np.ndarray
    align_vocab: list
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.src)

    @property
    def scheme(self):
        return self.metadata.get("scheme")

    def select(self, rows) -> "PhraseArrays":
        return PhraseArrays(
            self.src_phrases, self.tgt_phrases, self.src[rows], self.tgt[rows], self.features[rows],
            self.counts[rows], self.align[rows], self.align_vocab, dict(self.metadata),
        )

    def entries(self, rows=None) -> Iterator[PhraseEntry]:
        rows = np.arange(len(self)) if rows is None else np.asarray(rows)
        sp, tp, av = self.src_phrases, self.tgt_phrases, self.align_vocab
        for s, t, f, c, a in zip(
            self.src[rows].tolist(), self.tgt[rows].tolist(), self.features[rows].tolist(),
            self.counts[rows].tolist(), self.align[rows].tolist(),
        ):
            yield PhraseEntry(sp[s], tp[t], f[0], f[1], f[2], f[3], av[a], c[0], c[1], c[2])

    def to_table(self, src_filter=None) -> PhraseTable:
        """Materialize entries, optionally only those whose source phrase is in ``src_filter``."""
        rows = None
        if src_filter is not None:
            wanted = np.array([p in src_filter for p in self.src_phrases], dtype=bool)
            rows = np.nonzero(wanted[self.src])[0] if len(self.src_phrases) else np.zeros(0, dtype=np.int64)
        table = PhraseTable(metadata=dict(self.metadata))
        for e in self.entries(rows):
            table.add(e)
        return table

    @classmethod
    def from_table(cls, table: PhraseTable) -> "PhraseArrays":
        src_id: dict = {}
        tgt_id: dict = {}
        al_id: dict = {}
        src, tgt, feats, counts, align = [], [], [], [], []
        for e in table:
            src.append(src_id.setdefault(e.src, len(src_id)))
            tgt.append(tgt_id.setdefault(e.tgt, len(tgt_id)))
            align.append(al_id.setdefault(tuple(e.alignment), len(al_id)))
            feats.append(e.features)
            counts.append((e.joint_count, e.src_count, e.tgt_count))
        return cls(
            list(src_id), list(tgt_id), np.array(src, dtype=np.int64), np.array(tgt, dtype=np.int64),
            np.array(feats, dtype=float).reshape(-1, 4), np.array(counts, dtype=float).reshape(-1, 3),
            np.array(align, dtype=np.int64), list(al_id), dict(table.metadata),
        )

    def tgt_rank(self) -> np.ndarray:
        """Position of each target phrase in sorted order."""
        order = sorted(range(len(self.tgt_phrases)), key=self.tgt_phrases.__getitem__)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        return rank

    def limit(self, limit: int | None, weights=None, length_weight: float = 0.0) -> "PhraseArrays":
        """Same selection as :func:`limit_table`: best ``limit`` targets per source phrase."""
        if not limit or not len(self):
            return self
        tgt_len = np.array([len(p) for p in self.tgt_phrases], dtype=float)
        rows = top_rows(
            self.src, self.tgt, self.features, limit, weights, length_weight, self.tgt_rank(), tgt_len
        )
        return self.select(rows)

    def save(self, path) -> None:
        """Write to an uncompressed ``.npz`` archive; phrase lists are stored as UTF-8 text blobs."""

        def blob(lines):
            return np.frombuffer("\n".join(lines).encode("utf-8"), dtype=np.uint8)

        np.savez(
            path,
            src_phrases=blob(" ".join(p) for p in self.src_phrases),
            tgt_phrases=blob(" ".join(p) for p in self.tgt_phrases),
            src=self.src, tgt=self.tgt, features=self.features, counts=self.counts, align=self.align,
            align_vocab=blob(" ".join(f"{i}-{j}" for i, j in a) for a in self.align_vocab),
            sizes=np.array([len(self.src_phrases), len(self.tgt_phrases), len(self.align_vocab)]),
            metadata=blob([json.dumps(self.metadata, sort_keys=True)]),
        )

    @classmethod
    def load(cls, path) -> "PhraseArrays":
        with np.load(path) as z:
            def lines(key, n):
                text = z[key].tobytes().decode("utf-8")
                return text.split("\n") if n else []

            def links(s):
                return tuple(tuple(int(x) for x in tok.split("-")) for tok in s.split())

            ns, nt, na = z["sizes"].tolist()
            return cls(
                [tuple(p.split()) for p in lines("src_phrases", ns)],
                [tuple(p.split()) for p in lines("tgt_phrases", nt)],
                z["src"], z["tgt"], z["features"], z["counts"], z["align"],
                [links(a) for a in lines("align_vocab", na)],
                json.loads(z["metadata"].tobytes().decode("utf-8")),
            )


def top_rows(src, tgt, features, limit, weights=None, length_weight=0.0, tgt_rank=None, tgt_len=None):
    """Sorted indices of the best ``limit`` rows per source id.

    Rows rank by ``sum_k w_k log10 f_k + length_weight * len(tgt)``, ties broken
    by target phrase order (``tgt_rank``).
    """
    w = np.asarray(weights or (1.0, 1.0, 1.0, 1.0), dtype=float)
    with np.errstate(divide="ignore"):
        score = np.log10(features) @ w
    if length_weight and tgt_len is not None:
        score = score + length_weight * tgt_len[tgt]
    tie = tgt_rank[tgt] if tgt_rank is not None else tgt
    idx = np.lexsort((tie, -score, src))
    s = src[idx]
    first = np.ones(len(s), dtype=bool)
    first[1:] = s[1:] != s[:-1]
    starts = np.nonzero(first)[0]
    pos = np.arange(len(s)) - np.repeat(starts, np.diff(np.append(starts, len(s))))
    return np.sort(idx[pos < limit])


def as_arrays(table) -> PhraseArrays:
    return table if isinstance(table, PhraseArrays) else PhraseArrays.from_table(table)


def _encode_units(sents) -> tuple:
    vocab: dict = {}
    ids, lens = [], []
    for sent in sents:
        lens.append(len(sent))
        ids.extend(vocab.setdefault(u, len(vocab)) for u in sent)
    return np.array(ids, dtype=np.int64), np.array(lens, dtype=np.int64), list(vocab)


def _span_ids(units: np.ndarray, starts: np.ndarray, lengths: np.ndarray, width: int, vocab: list) -> tuple:
    """Intern unit spans: returns (phrase id per span, phrase tuples).

    Spans are interned one length at a time: a span of length m+1 is the pair
    (id of its length-m prefix, next unit), which fits in one int64 key.
    """
    n = len(starts)
    if n == 0:
        return np.zeros(0, dtype=np.int64), []
    nv = len(vocab) + 1
    prefix = np.zeros(n, dtype=np.int64)
    code = np.zeros(n, dtype=np.int64)
    offset = 0
    for m in range(width):
        active = np.nonzero(lengths > m)[0]
        if len(active) == 0:
            break
        key = prefix[active] * nv + units[starts[active] + m]
        uniq, inv = np.unique(key, return_inverse=True)
        prefix[active] = inv.ravel() + 1
        ends = active[lengths[active] == m + 1]
        code[ends] = offset + prefix[ends]
        offset += len(uniq) + 1
    _, first, inv = np.unique(code, return_index=True, return_inverse=True)
    phrases = [tuple(vocab[x] for x in units[s : s + l]) for s, l in zip(starts[first].tolist(), lengths[first].tolist())]
    return inv.ravel().astype(np.int64), phrases


def _range_extrema(values: np.ndarray, width: int, fill, fn) -> list:
    """``out[m][j] = fn(values[j : j + m + 1])`` for m < width, padded with ``fill``."""
    padded = np.concatenate((values, np.full(width, fill, dtype=values.dtype)))
    out = [padded[: len(values)]]
    for m in range(1, width):
        out.append(fn(out[-1], padded[m : m + len(values)]))
    return out


def _link_factors(units_a, units_b, la, lb, w: dict, vocab_a, vocab_b, n_b, null_probs):
    """Per position of side b: mean w(b|a) over its links, or w(b|NULL) if unlinked."""
    out = np.array([null_probs.get(vocab_b[u], PROB_FLOOR) for u in range(len(vocab_b))])[units_b] if n_b else np.zeros(0)
    if len(la):
        code = units_a[la] * len(vocab_b) + units_b[lb]
        uniq, inv = np.unique(code, return_inverse=True)
        nb = len(vocab_b)
        vals = np.array([w.get((vocab_a[c // nb], vocab_b[c % nb]), PROB_FLOOR) for c in uniq.tolist()])
        sums = np.bincount(lb, weights=vals[inv.ravel()], minlength=n_b)
        cnt = np.bincount(lb, minlength=n_b)
        linked = cnt > 0
        out = out.copy()
        out[linked] = sums[linked] / cnt[linked]
    return out


def build_phrase_arrays(
    src_sents: Sequence, tgt_sents: Sequence, alignments: Sequence, lex_fwd=None, lex_rev=None,
    max_phrase_len: int = 7, prune_floor: float = PRUNE_FLOOR, metadata: dict | None = None,
) -> PhraseArrays:
    """Vectorized extraction and scoring over a whole bitext.

    Produces exactly the pairs of :func:`extract_sentence` and the scores of
    :func:`score_phrases`, up to floating-point rounding in the lexical weights
    (computed as differences of log prefix sums).
    """
    L = max_phrase_len
    if L < 1:
        raise ValueError("max_phrase_len must be >= 1")
    src_sents, tgt_sents, alignments = list(src_sents), list(tgt_sents), list(alignments)
    if not (len(src_sents) == len(tgt_sents) == len(alignments)):
        raise ValueError("bitext and alignments differ in length")
    S, slen, svocab = _encode_units(src_sents)
    T, tlen, tvocab = _encode_units(tgt_sents)
    soff = np.concatenate(([0], np.cumsum(slen))).astype(np.int64)
    toff = np.concatenate(([0], np.cumsum(tlen))).astype(np.int64)
    li, lj = [], []
    for n, al in enumerate(alignments):
        links = al.links if isinstance(al, AlignmentMatrix) else al
        for i, j in links:
            if not (0 <= i < slen[n] and 0 <= j < tlen[n]):
                raise ValueError(f"link {i}-{j} out of range in sentence {n}")
            li.append(soff[n] + i)
            lj.append(toff[n] + j)
    li = np.array(li, dtype=np.int64)
    lj = np.array(lj, dtype=np.int64)
    order = np.lexsort((lj, li))
    li, lj = li[order], lj[order]
    NS, NT = len(S), len(T)
    BIG = np.int64(1 << 40)

    smin = np.full(NS, BIG)
    smax = np.full(NS, -1, dtype=np.int64)
    np.minimum.at(smin, li, lj)
    np.maximum.at(smax, li, lj)
    tmin = np.full(NT, BIG)
    tmax = np.full(NT, -1, dtype=np.int64)
    np.minimum.at(tmin, lj, li)
    np.maximum.at(tmax, lj, li)
    rmin = _range_extrema(tmin, L, BIG, np.minimum)
    rmax = _range_extrema(tmax, L, np.int64(-1), np.maximum)
    s_end = np.repeat(soff[1:], slen) - 1  # last position of each unit's sentence
    t_start = np.repeat(toff[:-1], tlen)
    t_end = np.repeat(toff[1:], tlen) - 1

    # consistent blocks, one per source span at most
    blocks = []
    starts = np.arange(NS, dtype=np.int64)
    fmin, fmax = smin.copy(), smax.copy()
    smin_p = np.concatenate((smin, np.full(L, BIG)))
    smax_p = np.concatenate((smax, np.full(L, -1, dtype=np.int64)))
    for l in range(1, L + 1):
        if l > 1:
            fmin = np.minimum(fmin, smin_p[starts + l - 1])
            fmax = np.maximum(fmax, smax_p[starts + l - 1])
        ok = (starts + l - 1 <= s_end) & (fmax >= 0)
        width = fmax - fmin + 1
        ok &= width <= L
        e1 = starts[ok]
        e2 = e1 + l - 1
        f1, f2, w = fmin[ok], fmax[ok], width[ok]
        cons = np.ones(len(e1), dtype=bool)
        for m in range(1, L + 1):
            sel = w == m
            if sel.any():
                cons[sel] = (rmin[m - 1][f1[sel]] >= e1[sel]) & (rmax[m - 1][f1[sel]] <= e2[sel])
        blocks.append((e1[cons], e2[cons], f1[cons], f2[cons]))
    e1 = np.concatenate([b[0] for b in blocks])
    e2 = np.concatenate([b[1] for b in blocks])
    f1 = np.concatenate([b[2] for b in blocks])
    f2 = np.concatenate([b[3] for b in blocks])
    nblk = len(e1)

    # unaligned target runs next to each position, capped by the phrase length
    unaligned = tmax < 0
    ul = np.zeros(NT, dtype=np.int64)
    ur = np.zeros(NT, dtype=np.int64)
    okl = np.ones(NT, dtype=bool)
    okr = np.ones(NT, dtype=bool)
    pos = np.arange(NT, dtype=np.int64)
    for k in range(1, L):
        okl &= (pos - k >= t_start) & unaligned[np.maximum(pos - k, 0)]
        okr &= (pos + k <= t_end) & unaligned[np.minimum(pos + k, NT - 1)]
        ul += okl
        ur += okr

    # block link signatures, relative to the block's aligned corner
    lo = np.searchsorted(li, e1, side="left")
    hi = np.searchsorted(li, e2, side="right")
    nl = hi - lo
    offs = np.concatenate(([0], np.cumsum(nl)[:-1])).astype(np.int64)
    rep = np.repeat(np.arange(nblk), nl)
    lidx = lo[rep] + np.arange(int(nl.sum()), dtype=np.int64) - offs[rep]
    bit = (li[lidx] - e1[rep]) * L + (lj[lidx] - f1[rep])
    nwords = (L * L + SIG_BITS - 1) // SIG_BITS
    sig = np.zeros((nblk, nwords), dtype=np.int64)
    if nblk:
        for wd in range(nwords):
            vals = np.where(bit // SIG_BITS == wd, np.left_shift(np.int64(1), bit % SIG_BITS), 0)
            sig[:, wd] = np.add.reduceat(vals, offs)

    # extended variants
    occ_b, occ_a, occ_fs, occ_fe = [], [], [], []
    left, right, width = ul[f1], ur[f2], f2 - f1 + 1
    for a in range(L):
        for b in range(L - a):
            sel = (a <= left) & (b <= right) & (width + a + b <= L)
            if not sel.any():
                if b == 0:
                    break
                continue
            idx = np.nonzero(sel)[0]
            occ_b.append(idx)
            occ_a.append(np.full(len(idx), a, dtype=np.int64))
            occ_fs.append(f1[idx] - a)
            occ_fe.append(f2[idx] + b)
    if occ_b:
        ob, oa = np.concatenate(occ_b), np.concatenate(occ_a)
        ofs, ofe = np.concatenate(occ_fs), np.concatenate(occ_fe)
    else:
        ob = oa = ofs = ofe = np.zeros(0, dtype=np.int64)

    src_of_block, src_phrases = _span_ids(S, e1, e2 - e1 + 1, L, svocab)
    tspan = ofs * (L + 1) + (ofe - ofs + 1)
    tu, tinv = np.unique(tspan, return_inverse=True)
    tgt_of_span, tgt_phrases = _span_ids(T, tu // (L + 1), tu % (L + 1), L, tvocab)
    o_src = src_of_block[ob]
    o_tgt = tgt_of_span[tinv.ravel()]

    # lexical weights from per-position factors
    wf, wr = _as_dict(lex_fwd), _as_dict(lex_rev)
    if wf:
        null_f = {t: p for (s, t), p in wf.items() if s == NULL}
        null_r = {t: p for (s, t), p in wr.items() if s == NULL}
        fac_t = _link_factors(S, T, li, lj, wf, svocab, tvocab, NT, null_f)
        fac_s = _link_factors(T, S, lj, li, wr, tvocab, svocab, NS, null_r)
        ct = np.concatenate(([0.0], np.cumsum(np.log(fac_t))))
        cs = np.concatenate(([0.0], np.cumsum(np.log(fac_s))))
        lex_ts = np.maximum(np.exp(ct[ofe + 1] - ct[ofs]), PROB_FLOOR)
        lex_st = np.maximum(np.exp(cs[e2[ob] + 1] - cs[e1[ob]]), PROB_FLOOR)
    else:
        lex_ts = lex_st = np.ones(len(ob))

    # aggregate occurrences into pairs
    ntp = np.int64(max(len(tgt_phrases), 1))
    pair = o_src * ntp + o_tgt
    upair, grp = np.unique(pair, return_inverse=True)
    grp = grp.ravel()
    npair = len(upair)
    joint = np.bincount(grp, minlength=npair).astype(float)
    lts = np.zeros(npair)
    lst = np.zeros(npair)
    np.maximum.at(lts, grp, lex_ts)
    np.maximum.at(lst, grp, lex_st)
    p_src, p_tgt = upair // ntp, upair % ntp
    src_tot = np.bincount(p_src, weights=joint, minlength=len(src_phrases))
    tgt_tot = np.bincount(p_tgt, weights=joint, minlength=len(tgt_phrases))

    # most frequent internal alignment per pair; ties go to the smaller link tuple
    vkeys = [oa] + [sig[ob, k] for k in range(nwords)]
    vorder = np.lexsort(tuple(reversed(vkeys)) + (grp,))
    g_sorted = grp[vorder]
    vk_sorted = [k[vorder] for k in vkeys]
    new = np.ones(len(vorder), dtype=bool)
    if len(vorder):
        diff = g_sorted[1:] != g_sorted[:-1]
        for k in vk_sorted:
            diff |= k[1:] != k[:-1]
        new[1:] = diff
    vstart = np.nonzero(new)[0]
    vcount = np.diff(np.append(vstart, len(vorder)))
    vgrp = g_sorted[vstart]
    vrep = vorder[vstart]  # an occurrence realizing each variant
    best_order = np.lexsort((-vcount, vgrp))
    bg = vgrp[best_order]
    head = np.ones(len(bg), dtype=bool)
    head[1:] = bg[1:] != bg[:-1]
    heads = best_order[head]
    best_rep = vrep[heads]
    # second-best with equal count means a tie to settle on the link tuples
    nxt = np.append(best_order[1:], -1)[head]
    tie = np.zeros(len(heads), dtype=bool)
    valid = nxt >= 0
    tie[valid] = (vgrp[np.maximum(nxt[valid], 0)] == vgrp[heads[valid]]) & (
        vcount[np.maximum(nxt[valid], 0)] == vcount[heads[valid]]
    )

    def decode(occ: int) -> tuple:
        b = int(ob[occ])
        a = int(oa[occ])
        links = []
        for wd in range(nwords):
            v = int(sig[b, wd])
            while v:
                low = v & -v
                k = wd * SIG_BITS + low.bit_length() - 1
                links.append((k // L, k % L + a))
                v ^= low
        return tuple(sorted(links))

    al_vocab: dict = {}
    align = np.empty(npair, dtype=np.int64)
    tie_groups = set(bg[head][tie].tolist())
    cand: dict = defaultdict(list)
    if tie_groups:
        top = dict(zip(vgrp[heads].tolist(), vcount[heads].tolist()))
        for g, c, r in zip(vgrp.tolist(), vcount.tolist(), vrep.tolist()):
            if g in tie_groups and c == top[g]:
                cand[g].append(decode(r))
    # decode each distinct signature once
    rows = np.column_stack([oa[best_rep]] + [sig[ob[best_rep], k] for k in range(nwords)])
    _, first, inv = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    sig_align = np.array(
        [al_vocab.setdefault(decode(int(best_rep[k])), len(al_vocab)) for k in first.tolist()], dtype=np.int64
    ).reshape(-1)
    align[vgrp[heads]] = sig_align[inv.ravel()] if len(first) else np.zeros(0, dtype=np.int64)
    for g, links in cand.items():
        align[g] = al_vocab.setdefault(min(links), len(al_vocab))

    feats = np.column_stack((joint / src_tot[p_src], lts, joint / tgt_tot[p_tgt], lst)) if npair else np.zeros((0, 4))
    counts = np.column_stack((joint, src_tot[p_src], tgt_tot[p_tgt])) if npair else np.zeros((0, 3))
    keep = feats.max(axis=1) >= prune_floor if npair else np.zeros(0, dtype=bool)
    return PhraseArrays(
        src_phrases, tgt_phrases, p_src[keep], p_tgt[keep], feats[keep], counts[keep], align[keep],
        list(al_vocab), dict(metadata or {}),
    )
