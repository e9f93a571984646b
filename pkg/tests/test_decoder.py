import itertools
import math
import random

import pytest

from pivotsmt.decoder import (
    FEATURE_NAMES,
    Decoder,
    FeatureWeights,
    NBestEntry,
    NBestList,
    decode,
    read_nbest,
    tune_weights,
)
from pivotsmt.evalmetrics import sentence_stats
from pivotsmt.ngramlm import train_lm
from pivotsmt.phrasetab import PhraseEntry, PhraseTable

TGT = "xyzw"


def random_instance(rng, max_units=4, max_opts=3):
    n = rng.randint(1, max_units)
    units = [rng.choice("abc") for _ in range(n)]
    table = PhraseTable()
    for i in range(n):
        for j in range(i + 1, n + 1):
            src = tuple(units[i:j])
            if src in table.entries or rng.random() < 0.3:
                continue
            for _ in range(rng.randint(1, max_opts)):
                tgt = tuple(rng.choice(TGT) for _ in range(rng.randint(1, 3)))
                if (src, tgt) in table:
                    continue
                table.add(PhraseEntry(src, tgt, *(rng.uniform(0.05, 1.0) for _ in range(4))))
    lm = train_lm([[rng.choice(TGT) for _ in range(rng.randint(1, 6))] for _ in range(8)], rng.randint(1, 3))
    w = FeatureWeights(*(rng.uniform(-1, 1) for _ in range(7)), oov=-10.0)
    return units, table, lm, w


def brute_force(units, table, lm, w):
    """Best score per target surface over every segmentation and option choice."""
    n = len(units)
    best = {}

    def options(i, j):
        opts = [
            tuple(math.log10(f) for f in e.features) + (-len(e.tgt), 1.0, 0.0, e.tgt)
            for e in table.get(tuple(units[i:j]))
        ]
        if not opts and j == i + 1:
            opts = [(0.0, 0.0, 0.0, 0.0, -1.0, 1.0, 1.0, (units[i],))]
        return opts

    def segmentations(i):
        if i == n:
            yield []
            return
        for j in range(i + 1, n + 1):
            opts = options(i, j)
            if opts:
                for rest in segmentations(j):
                    yield [opts] + rest

    for seg in segmentations(0):
        for choice in itertools.product(*seg):
            feats = [0.0] * 8
            tgt = ()
            for o in choice:
                for k in range(4):
                    feats[k] += o[k]
                feats[5] += o[4]
                feats[6] += o[5]
                feats[7] += o[6]
                tgt += o[7]
            feats[4] = lm.sentence_logprob(tgt)
            score = w.dot(feats)
            if score > best.get(tgt, -math.inf):
                best[tgt] = score
    return best


def test_exact_search_matches_brute_force():
    rng = random.Random(0)
    for _ in range(300):
        units, table, lm, w = random_instance(rng)
        oracle = brute_force(units, table, lm, w)
        dec = Decoder(table, lm, w, pop_limit=None, table_limit=None)
        nb = dec.decode(units, 5)
        top = sorted(oracle.values(), reverse=True)
        assert nb.best.score == pytest.approx(top[0], abs=1e-9)
        assert [e.score for e in nb] == pytest.approx(top[: len(nb)], abs=1e-9)
        assert len({e.units for e in nb}) == len(nb)
        for e in nb:
            assert oracle[e.units] == pytest.approx(e.score, abs=1e-9)
            assert w.dot(e.features) == pytest.approx(e.score, abs=1e-9)


def test_bounded_search_never_beats_exact():
    rng = random.Random(1)
    for _ in range(200):
        units, table, lm, w = random_instance(rng, 6, 3)
        exact = Decoder(table, lm, w, pop_limit=None, table_limit=None).decode(units).best.score
        for pop in (1, 2, 5):
            got = Decoder(table, lm, w, pop_limit=pop, table_limit=None).decode(units).best
            assert got.score <= exact + 1e-9
            assert w.dot(got.features) == pytest.approx(got.score, abs=1e-9)


def test_greedy_when_no_ambiguity():
    table = PhraseTable()
    for s, t in zip("abc", "xyz"):
        table.add(PhraseEntry((s,), (t,), 0.5, 0.5, 0.5, 0.5))
    lm = train_lm([["x", "y", "z"]], 2)
    assert Decoder(table, lm).translate(["a", "b", "c", "a"]) == ("x", "y", "z", "x")


def test_oov_copy_through():
    table = PhraseTable()
    table.add(PhraseEntry(("a",), ("x",), 1, 1, 1, 1))
    lm = train_lm([["x"]], 2)
    nb = decode(["q", "r"], table, lm)
    best = nb.best
    assert best.units == ("q", "r")
    assert best.features[FEATURE_NAMES.index("oov")] == 2.0
    assert best.features[FEATURE_NAMES.index("word_penalty")] == -2.0


def test_empty_input():
    table = PhraseTable()
    lm = train_lm([["x"]], 1)
    nb = decode([], table, lm)
    assert nb.best.units == () and nb.best.score == 0.0


def test_invalid_pop_limit():
    with pytest.raises(ValueError):
        Decoder(PhraseTable(), train_lm([["x"]], 1), pop_limit=0)


def test_deterministic():
    rng = random.Random(3)
    units, table, lm, w = random_instance(rng, 4, 3)
    a = Decoder(table, lm, w, pop_limit=3).decode(units, 4)
    b = Decoder(table, lm, w, pop_limit=3).decode(units, 4)
    assert [(e.units, e.score) for e in a] == [(e.units, e.score) for e in b]


def test_weights_roundtrip_and_validation(tmp_path):
    w = FeatureWeights(lm=0.7, word_penalty=0.3)
    w.save(tmp_path / "w.json")
    assert FeatureWeights.load(tmp_path / "w.json") == w
    assert FeatureWeights.from_tuple(w.as_tuple()) == w
    with pytest.raises(ValueError):
        FeatureWeights(lm=float("nan"))


def test_nbest_format_roundtrip():
    nb = NBestList([NBestEntry(("x", "y"), -1.5, (0.1,) * 8), NBestEntry(("z",), -2.0, (0.2,) * 8)])
    parsed = read_nbest(nb.to_lines(3))
    assert [e.units for e in parsed[3]] == [("x", "y"), ("z",)]
    assert parsed[3][0].features == pytest.approx((0.1,) * 8)


def toy_subword_system():
    """A table whose target units need desegmenting to score well."""
    table = PhraseTable()
    words = {"a": ("ka", "_"), "b": ("to", "_"), "c": ("mi", "_")}
    for s, t in words.items():
        table.add(PhraseEntry((s, "_"), t, 0.6, 0.6, 0.6, 0.6))
        table.add(PhraseEntry((s, "_"), t[:1] + ("la", "_"), 0.4, 0.4, 0.4, 0.4))
    lm = train_lm([["ka", "la", "_", "to", "la", "_"], ["mi", "la", "_"]] * 3, 3)
    dev, refs = [], []
    rng = random.Random(9)
    for _ in range(60):
        ws = [rng.choice("abc") for _ in range(rng.randint(2, 4))]
        dev.append([u for w in ws for u in (w, "_")])
        refs.append(" ".join({"a": "ka", "b": "to", "c": "mi"}[w] for w in ws))
    return table, lm, dev, refs


def deseg(units):
    return " ".join("".join(units).split("_")).strip()


def test_tuning_scores_desegmented_words():
    table, lm, dev, refs = toy_subword_system()
    seen = []

    def stats(hyp, ref):
        seen.append(hyp)
        return sentence_stats(hyp, ref)

    dec = Decoder(table, lm, FeatureWeights(), pop_limit=50)
    initial = FeatureWeights()
    tuned = tune_weights(dev, refs, initial, dec, deseg, sentence_stats=stats)
    assert seen and all("_" not in h for h in seen)

    def dev_bleu(w):
        from pivotsmt.evalmetrics import bleu

        dec.set_weights(w)
        return bleu([deseg(dec.translate(s)) for s in dev], refs)

    assert dev_bleu(tuned) >= dev_bleu(initial)


def test_tuning_fixed_point():
    table, lm, dev, refs = toy_subword_system()
    dec = Decoder(table, lm, pop_limit=50)
    w0 = tune_weights(dev, refs, FeatureWeights(), dec, deseg)
    assert tune_weights(dev, refs, w0, dec, deseg) == w0
