"""Sentence segmentation into translation units and the inverse desegmentation.

Four schemes are supported: ``word`` (whitespace tokens), ``char`` (one
codepoint per unit), ``os`` (orthographic syllables, consonant run followed by
a vowel run) and ``bpe`` (learned byte-pair merges). Every subword scheme marks
the end of each word with a boundary marker token so that decoder output can be
turned back into words without any other state.
"""

from __future__ import annotations

import heapq
import json
import functools
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

SCHEMES = ("word", "char", "os", "bpe")
DEFAULT_MARKER = "_"
BPE_HEADER = "#version pivotsmt-bpe-1"


class SegmentationError(ValueError):
    pass


class UnclassifiedCodepoint(SegmentationError):
    def __init__(self, char: str, position: int):
        self.char = char
        self.position = position
        super().__init__(f"cannot classify {char!r} (U+{ord(char):04X}) at position {position}")


class EmptyCorpus(SegmentationError):
    pass


@dataclass(frozen=True)
class ScriptProfile:
    name: str
    vowels: frozenset = frozenset()
    consonants: frozenset = frozenset()
    combining_marks: frozenset = frozenset()
    cluster_joiners: frozenset = frozenset()
    # abugidas: a consonant without a following vowel sign or joiner carries a vowel
    inherent_vowel: bool = False

    def __post_init__(self):
        groups = [self.vowels, self.consonants, self.combining_marks, self.cluster_joiners]
        seen: set = set()
        for g in groups:
            clash = seen & g
            if clash:
                raise ValueError(f"profile {self.name}: codepoints in more than one class: {sorted(clash)}")
            seen |= g

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptProfile":
        return cls(
            name=d.get("name", "custom"),
            vowels=frozenset(d.get("vowels", ())),
            consonants=frozenset(d.get("consonants", ())),
            combining_marks=frozenset(d.get("combining_marks", ())),
            cluster_joiners=frozenset(d.get("cluster_joiners", ())),
            inherent_vowel=bool(d.get("inherent_vowel", False)),
        )

    @classmethod
    def load(cls, path) -> "ScriptProfile":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "vowels": sorted(self.vowels),
            "consonants": sorted(self.consonants),
            "combining_marks": sorted(self.combining_marks),
            "cluster_joiners": sorted(self.cluster_joiners),
            "inherent_vowel": self.inherent_vowel,
        }


@functools.lru_cache(maxsize=None)
def builtin_profile(name: str) -> ScriptProfile:
    """Load one of the shipped profiles (``latin`` or ``devanagari``)."""
    text = resources.files("pivotsmt.profiles").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return ScriptProfile.from_dict(json.loads(text))


def load_profile(name_or_path) -> ScriptProfile:
    if name_or_path is None:
        return builtin_profile("latin")
    p = Path(name_or_path)
    if p.exists():
        return ScriptProfile.load(p)
    return builtin_profile(str(name_or_path))


@dataclass(frozen=True)
class SegmentedSentence:
    units: tuple
    scheme: str
    boundary_marker: str = DEFAULT_MARKER

    def __iter__(self):
        return iter(self.units)

    def __len__(self):
        return len(self.units)

    def __str__(self):
        return " ".join(self.units)


def is_standalone(ch: str) -> bool:
    """Digits, punctuation and symbols always form single-character units."""
    return unicodedata.category(ch)[0] in "NPS"


def _words(sentence: str, marker: str) -> list[str]:
    words = unicodedata.normalize("NFC", sentence).split()
    for w in words:
        if marker in w:
            raise SegmentationError(f"boundary marker {marker!r} occurs inside word {w!r}")
    return words


def _chunks(word: str) -> list[str]:
    """Split a word into maximal runs of letters, with standalone characters on their own."""
    out, cur = [], []
    for ch in word:
        if is_standalone(ch):
            if cur:
                out.append("".join(cur))
                cur = []
            out.append(ch)
        else:
            cur.append(ch)
    if cur:
        out.append("".join(cur))
    return out


def _with_markers(per_word: Iterable[list[str]], marker: str, final_marker: bool) -> tuple:
    units: list[str] = []
    per_word = list(per_word)
    for k, w in enumerate(per_word):
        units.extend(w)
        if final_marker or k < len(per_word) - 1:
            units.append(marker)
    return tuple(units)


# ---------------------------------------------------------------------------
# orthographic syllables


def _os_word(word: str, profile: ScriptProfile, offset: int) -> list[str]:
    units: list[str] = []
    cur = ""
    voiced = False  # cur already holds its vowel nucleus
    n = len(word)
    for k, ch in enumerate(word):
        if ch in profile.consonants:
            if voiced:
                units.append(cur)
                cur, voiced = "", False
            cur += ch
            if profile.inherent_vowel:
                nxt = word[k + 1] if k + 1 < n else None
                if nxt is None or not (nxt in profile.vowels or nxt in profile.cluster_joiners):
                    voiced = True
        elif ch in profile.vowels:
            cur += ch
            voiced = True
        elif ch in profile.cluster_joiners:
            cur += ch
        elif ch in profile.combining_marks:
            if cur:
                cur += ch
            elif units:
                units[-1] += ch
            else:
                cur = ch
        elif is_standalone(ch):
            if cur:
                units.append(cur)
                cur, voiced = "", False
            units.append(ch)
        else:
            raise UnclassifiedCodepoint(ch, offset + k)
    if cur:
        units.append(cur)
    return units


def segment_os(
    sentence: str,
    profile: ScriptProfile | None = None,
    marker: str = DEFAULT_MARKER,
    final_marker: bool = True,
) -> SegmentedSentence:
    """Orthographic-syllable segmentation.

    A unit is a consonant run followed by a maximal vowel run; a word-final
    consonant run is a unit of its own. Raises :class:`UnclassifiedCodepoint`
    for letters the profile does not know.
    """
    profile = profile or builtin_profile("latin")
    text = unicodedata.normalize("NFC", sentence)
    per_word = []
    pos = 0
    for w in _words(text, marker):
        pos = text.index(w, pos)
        per_word.append(_os_word(w, profile, pos))
        pos += len(w)
    return SegmentedSentence(_with_markers(per_word, marker, final_marker), "os", marker)


def os_vocab_size(corpus: Iterable[str], profile: ScriptProfile | None = None) -> int:
    profile = profile or builtin_profile("latin")
    vocab: set[str] = set()
    for line in corpus:
        for w in line.split():
            vocab.update(_os_word(unicodedata.normalize("NFC", w), profile, 0))
    return len(vocab)


# ---------------------------------------------------------------------------
# byte pair encoding


@dataclass
class BpeModel:
    merges: list = field(default_factory=list)
    vocab: set = field(default_factory=set)
    # corpus frequency of each merge at the time it was chosen
    counts: list = field(default_factory=list)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self._ranks = {m: i for i, m in enumerate(self.merges)}
        self._cache: dict[str, tuple] = {}

    @property
    def num_merges(self) -> int:
        return len(self.merges)

    def encode_chunk(self, chunk: str) -> tuple:
        hit = self._cache.get(chunk)
        if hit is not None:
            return hit
        if len(chunk) == 1:
            out = (chunk,)
        else:
            out = tuple(_replay(list(chunk), self._ranks))
        self._cache[chunk] = out
        return out

    def encode_word(self, word: str) -> list[str]:
        units: list[str] = []
        for c in _chunks(word):
            units.extend(self.encode_chunk(c))
        return units

    def truncated(self, n: int) -> "BpeModel":
        """Model with only the first ``n`` merges; vocab is recomputed from merge outputs."""
        merges = self.merges[:n]
        vocab = {chars for chars in self.vocab if len(chars) == 1} | {a + b for a, b in merges}
        return BpeModel(merges, vocab, self.counts[:n])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(BPE_HEADER + "\n")
            for a, b in self.merges:
                f.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        if not lines or lines[0].strip() != BPE_HEADER:
            raise ValueError(f"{path}: not a pivotsmt BPE model (missing {BPE_HEADER!r})")
        merges = [tuple(l.split(" ")) for l in lines[1:] if l.strip()]
        for m in merges:
            if len(m) != 2:
                raise ValueError(f"{path}: malformed merge line {' '.join(m)!r}")
        return cls(merges, {a + b for a, b in merges})


def _replay(symbols: list[str], ranks: dict) -> list[str]:
    while len(symbols) > 1:
        best, best_rank = None, None
        for pair in zip(symbols, symbols[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best, best_rank = pair, r
        if best is None:
            break
        symbols = _merge_pair(symbols, best)
    return symbols


def _merge_pair(symbols: list[str], pair: tuple) -> list[str]:
    a, b = pair
    out, i, n = [], 0, len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _word_types(corpus: Iterable[str]) -> Counter:
    types: Counter = Counter()
    nonempty = False
    for line in corpus:
        for w in unicodedata.normalize("NFC", line).split():
            nonempty = True
            for c in _chunks(w):
                types[c] += 1
    if not nonempty:
        raise EmptyCorpus("cannot train BPE on an empty corpus")
    return types


def train_bpe(corpus: Iterable[str], num_merges: int, *, track_vocab: bool = False):
    """Learn ``num_merges`` merges greedily, most frequent adjacent pair first.

    Pairs never cross word (or standalone-character) boundaries. Ties go to the
    lexicographically smallest ``(left, right)``. Training stops early once no
    pair occurs at least twice. With ``track_vocab`` the vocabulary size after
    each merge is also returned (index ``k`` = size after ``k`` merges).
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    types = _word_types(corpus)
    words = [list(c) for c in types]
    freqs = list(types.values())

    sym_counts: Counter = Counter()
    pair_counts: Counter = Counter()
    where: dict = defaultdict(set)
    for idx, (syms, fr) in enumerate(zip(words, freqs)):
        for s in syms:
            sym_counts[s] += fr
        for p in zip(syms, syms[1:]):
            pair_counts[p] += fr
            where[p].add(idx)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges, counts = [], []
    sizes = [len(sym_counts)]
    while len(merges) < num_merges and heap:
        negc, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -negc:
            continue  # stale entry
        if -negc < 2:
            break
        merges.append(pair)
        counts.append(-negc)
        touched: set = set()
        for idx in sorted(where[pair]):
            syms, fr = words[idx], freqs[idx]
            new = _merge_pair(syms, pair)
            if new == syms:
                continue
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= fr
                touched.add(p)
                if pair_counts[p] == 0:
                    del pair_counts[p]
            for s in syms:
                sym_counts[s] -= fr
                if sym_counts[s] == 0:
                    del sym_counts[s]
            for s in new:
                sym_counts[s] += fr
            for p in zip(new, new[1:]):
                pair_counts[p] += fr
                where[p].add(idx)
                touched.add(p)
            words[idx] = new
        where.pop(pair, None)
        for p in touched:
            c = pair_counts.get(p)
            if c:
                heapq.heappush(heap, (-c, p))
        sizes.append(len(sym_counts))
    model = BpeModel(merges, set(sym_counts), counts)
    return (model, sizes) if track_vocab else model


def train_bpe_matching(corpus: Sequence[str], target_vocab: int, max_merges: int = 100_000) -> BpeModel:
    """Train BPE with the merge count whose vocabulary size is closest to ``target_vocab``."""
    corpus = list(corpus)
    full, sizes = train_bpe(corpus, max_merges, track_vocab=True)
    best_k = min(range(len(sizes)), key=lambda k: (abs(sizes[k] - target_vocab), k))
    if best_k == full.num_merges:
        return full
    # vocab must be the one the training corpus actually yields
    return train_bpe(corpus, best_k)


def apply_bpe(
    sentence: str, model: BpeModel, marker: str = DEFAULT_MARKER, final_marker: bool = True
) -> SegmentedSentence:
    per_word = [model.encode_word(w) for w in _words(sentence, marker)]
    return SegmentedSentence(_with_markers(per_word, marker, final_marker), "bpe", marker)


# ---------------------------------------------------------------------------
# scheme dispatch


def segment(
    sentence: str,
    scheme: str,
    *,
    profile: ScriptProfile | None = None,
    bpe_model: BpeModel | None = None,
    marker: str = DEFAULT_MARKER,
    final_marker: bool = True,
) -> SegmentedSentence:
    if scheme == "word":
        return SegmentedSentence(tuple(_words(sentence, marker)), "word", marker)
    if scheme == "char":
        per_word = [list(w) for w in _words(sentence, marker)]
        return SegmentedSentence(_with_markers(per_word, marker, final_marker), "char", marker)
    if scheme == "os":
        return segment_os(sentence, profile, marker, final_marker)
    if scheme == "bpe":
        if bpe_model is None:
            raise SegmentationError("bpe scheme needs a BPE model")
        return apply_bpe(sentence, bpe_model, marker, final_marker)
    raise SegmentationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def desegment(units, marker: str = DEFAULT_MARKER, scheme: str | None = None) -> str:
    """Rebuild the word string: concatenate units between boundary markers.

    Word-scheme input (no markers) is joined with single spaces.
    """
    if isinstance(units, SegmentedSentence):
        scheme = scheme or units.scheme
        marker = units.boundary_marker
        units = units.units
    if scheme == "word":
        return " ".join(units)
    words, cur = [], []
    for u in units:
        if u == marker:
            if cur:
                words.append("".join(cur))
                cur = []
        else:
            cur.append(u)
    if cur:
        words.append("".join(cur))
    return " ".join(words)


class Segmenter:
    """A configured segmentation scheme together with its inverse."""

    def __init__(self, scheme: str, *, profile=None, bpe_model=None, marker=DEFAULT_MARKER):
        if scheme not in SCHEMES:
            raise SegmentationError(f"unknown scheme {scheme!r}")
        if scheme == "bpe" and bpe_model is None:
            raise SegmentationError("bpe scheme needs a BPE model")
        self.scheme = scheme
        self.profile = profile or (builtin_profile("latin") if scheme == "os" else None)
        self.bpe_model = bpe_model
        self.marker = marker

    def __call__(self, sentence: str) -> SegmentedSentence:
        return segment(sentence, self.scheme, profile=self.profile, bpe_model=self.bpe_model, marker=self.marker)

    def desegment(self, units) -> str:
        return desegment(units, self.marker, self.scheme)
