"""Synthetic families of related languages with multi-way parallel corpora.

All languages descend from one proto-lexicon of CV-syllable stems plus a small
inflectional system (noun cases, verb tenses). A language keeps the sound-changed
proto stem for a concept with probability ``cognate_rate`` and otherwise coins
an unrelated word. Sentences come from one shared SOV template grammar, so every
corpus is sentence-aligned and word order agrees across the family.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from rapidfuzz.distance import LCSseq

SPLITS = ("train", "tune", "test")


class SpecError(ValueError):
    pass


@dataclass
class LanguageRules:
    name: str
    substitutions: dict = field(default_factory=dict)
    vowel_shifts: dict = field(default_factory=dict)
    suffix_mutations: list = field(default_factory=list)
    # chance that a concept gets a second, freely alternating word
    synonym_rate: float = 0.0
    # case / tense indices written as a separate function word instead of a suffix
    analytic_cases: list = field(default_factory=list)
    analytic_tenses: list = field(default_factory=list)
    # chance of a language-specific particle after the first noun of a clause
    particle_rate: float = 0.0

    def __post_init__(self):
        # JSON turns the pairs into lists
        self.suffix_mutations = [tuple(m) for m in self.suffix_mutations]

    def apply(self, word: str) -> str:
        table = {**self.substitutions, **self.vowel_shifts}
        keys = sorted(table, key=len, reverse=True)
        parts, i = [], 0
        while i < len(word):
            for k in keys:
                if k and word.startswith(k, i):
                    parts.append(table[k])
                    i += len(k)
                    break
            else:
                parts.append(word[i])
                i += 1
        out = "".join(parts)
        for old, new in self.suffix_mutations:
            if old and out.endswith(old):
                out = out[: -len(old)] + new
                break
        return out


@dataclass
class SynthLangSpec:
    languages: list
    proto_vocab_size: int = 400
    # inventory items may be multi-letter strings ("kh", "aa")
    consonants: str | list = "ptkbdgmnslrvjh"
    vowels: str | list = "aeiou"
    cognate_rate: float = 0.8
    word_order: str = "SOV"
    seed: int = 0
    noun_cases: int = 5
    verb_tenses: int = 4
    zipf: float = 1.0

    def __post_init__(self):
        self.languages = [l if isinstance(l, LanguageRules) else LanguageRules(**l) for l in self.languages]
        if not self.consonants or not self.vowels:
            raise SpecError("syllable inventory needs at least one consonant and one vowel")
        if not 0.0 <= self.cognate_rate <= 1.0:
            raise SpecError("cognate_rate must lie in [0, 1]")
        if len(self.languages) < 2:
            raise SpecError("a family needs at least two languages")
        if self.proto_vocab_size < 10:
            raise SpecError("proto_vocab_size must be at least 10")
        if self.word_order != "SOV":
            raise SpecError("only the SOV template grammar is implemented")

    @property
    def names(self) -> list:
        return [l.name for l in self.languages]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthLangSpec":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SynthLangSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class Family:
    spec: SynthLangSpec
    lexicons: dict  # language -> list of stems, aligned by concept
    corpora: dict  # split -> language -> list of sentences

    def write(self, out_dir) -> list:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for split, per_lang in self.corpora.items():
            for lang, lines in per_lang.items():
                p = out_dir / f"{split}.{lang}"
                p.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
                paths.append(p)
        return paths


def _word(rng: random.Random, spec: SynthLangSpec, lo: int = 2, hi: int = 4) -> str:
    return "".join(rng.choice(spec.consonants) + rng.choice(spec.vowels) for _ in range(rng.randint(lo, hi)))


def _unique_words(rng, spec, n, lo, hi, taken: set) -> list:
    out = []
    while len(out) < n:
        w = _word(rng, spec, lo, hi)
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def default_family_spec(
    num_languages: int = 5, cognate_rate: float = 0.8, seed: int = 0, rules_per_language: int = 3, **kw
) -> SynthLangSpec:
    """A family whose members differ by a few random sound changes each.

    Members also differ in which cases and tenses they mark with a separate
    function word and in how often they use a sentence particle.
    """
    rng = random.Random(f"family-{seed}")
    base = SynthLangSpec(languages=[LanguageRules("x"), LanguageRules("y")], **kw)
    langs = []
    for k in range(num_languages):
        subs, shifts, muts = {}, {}, []
        for _ in range(rules_per_language):
            kind = rng.random()
            if kind < 0.5:
                a, b = rng.sample(base.consonants, 2)
                subs[a] = b
            elif kind < 0.8:
                a, b = rng.sample(base.vowels, 2)
                shifts[a] = b
            else:
                v = rng.choice(base.vowels)
                muts.append((v, v + rng.choice(base.consonants)))
        cases = [c for c in range(1, base.noun_cases) if rng.random() < 0.5]
        tenses = [t for t in range(base.verb_tenses) if rng.random() < 0.3]
        langs.append(
            LanguageRules(
                f"L{k}", subs, shifts, muts, synonym_rate=0.05, analytic_cases=cases,
                analytic_tenses=tenses, particle_rate=round(rng.uniform(0.0, 0.3), 3),
            )
        )
    d = asdict(base)
    d.update(languages=langs, cognate_rate=cognate_rate, seed=seed)
    return SynthLangSpec(**d)


def generate_family(spec: SynthLangSpec, num_sentences: int) -> Family:
    """Sentence-aligned corpora for every language, split 8:1:1 into train/tune/test."""
    if num_sentences < 1:
        raise SpecError("num_sentences must be >= 1")
    rng = random.Random(f"proto-{spec.seed}")
    taken: set = set()
    n = spec.proto_vocab_size
    n_nouns = max(1, int(n * 0.6))
    n_verbs = max(1, int(n * 0.25))
    n_adjs = max(1, n - n_nouns - n_verbs)
    proto_stems = _unique_words(rng, spec, n, 2, 4, taken)
    case_sfx = [""] + _unique_words(rng, spec, spec.noun_cases - 1, 1, 2, taken)
    tense_sfx = _unique_words(rng, spec, spec.verb_tenses, 1, 2, taken)
    conj = _unique_words(rng, spec, 1, 1, 2, taken)[0]

    lexicons, synonyms, case_by_lang, tense_by_lang, conj_by_lang, particle_by_lang = {}, {}, {}, {}, {}, {}
    for li, rules in enumerate(spec.languages):
        lrng = random.Random(f"lex-{spec.seed}-{li}")
        lang_taken: set = set()
        stems, syns = [], {}
        for c, proto in enumerate(proto_stems):
            if lrng.random() < spec.cognate_rate:
                stem = rules.apply(proto)
            else:
                stem = _word(lrng, spec)
            stems.append(stem)
            lang_taken.add(stem)
            if lrng.random() < rules.synonym_rate:
                syns[c] = _word(lrng, spec)
        lexicons[rules.name] = stems
        synonyms[rules.name] = syns
        case_by_lang[rules.name] = [rules.apply(s) if s else s for s in case_sfx]
        tense_by_lang[rules.name] = [rules.apply(s) for s in tense_sfx]
        conj_by_lang[rules.name] = rules.apply(conj)
        particle_by_lang[rules.name] = _word(lrng, spec, 1, 1)

    nouns = list(range(n_nouns))
    verbs = list(range(n_nouns, n_nouns + n_verbs))
    adjs = list(range(n_nouns + n_verbs, n_nouns + n_verbs + n_adjs))

    def zipf_weights(k):
        return [1.0 / (r + 1) ** spec.zipf for r in range(k)]

    wn, wv, wa = zipf_weights(len(nouns)), zipf_weights(len(verbs)), zipf_weights(len(adjs))

    corpora = {s: {name: [] for name in spec.names} for s in SPLITS}
    n_train = int(round(num_sentences * 0.8))
    n_tune = int(round(num_sentences * 0.1))
    for idx in range(num_sentences):
        srng = random.Random(f"sent-{spec.seed}-{idx}")
        clauses = []
        for _ in range(2 if srng.random() < 0.25 else 1):
            slots = []  # (concept, kind, inflection index)
            for role_case in (0, 1) + ((2 + srng.randrange(spec.noun_cases - 2),) if srng.random() < 0.5 else ()):
                if srng.random() < 0.3:
                    slots.append((srng.choices(adjs, wa)[0], "adj", 0))
                slots.append((srng.choices(nouns, wn)[0], "noun", role_case % spec.noun_cases))
            slots.append((srng.choices(verbs, wv)[0], "verb", srng.randrange(spec.verb_tenses)))
            clauses.append(slots)
        split = "train" if idx < n_train else "tune" if idx < n_train + n_tune else "test"
        for li, rules in enumerate(spec.languages):
            name = rules.name
            vrng = random.Random(f"var-{spec.seed}-{idx}-{li}")
            words = []
            for ci, slots in enumerate(clauses):
                if ci:
                    words.append(conj_by_lang[name])
                first_noun = True
                for concept, kind, infl in slots:
                    stem = lexicons[name][concept]
                    alt = synonyms[name].get(concept)
                    if alt is not None and vrng.random() < 0.5:
                        stem = alt
                    if kind == "noun":
                        sfx = case_by_lang[name][infl]
                        words.extend((stem, sfx) if infl in rules.analytic_cases else (stem + sfx,))
                        if first_noun and vrng.random() < rules.particle_rate:
                            words.append(particle_by_lang[name])
                        first_noun = False
                    elif kind == "verb":
                        sfx = tense_by_lang[name][infl]
                        words.extend((stem, sfx) if infl in rules.analytic_tenses else (stem + sfx,))
                    else:
                        words.append(stem)
            words.append(".")
            corpora[split][name].append(" ".join(words))
    return Family(spec, lexicons, corpora)


def measure_lexical_similarity(lex_a: Sequence[str], lex_b: Sequence[str]) -> float:
    """Mean normalized longest-common-subsequence over concept-aligned word pairs."""
    if len(lex_a) != len(lex_b):
        raise ValueError("lexicons must be aligned (same length)")
    if not lex_a:
        return 0.0
    total = 0.0
    for a, b in zip(lex_a, lex_b):
        m = max(len(a), len(b))
        total += LCSseq.similarity(a, b) / m if m else 1.0
    return total / len(lex_a)
