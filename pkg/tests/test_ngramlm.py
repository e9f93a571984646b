import math
import random
from collections import Counter

import pytest

from pivotsmt.ngramlm import BOS, EOS, UNK, EmptyCorpus, NGramLM, train_lm


class InterpolatedKN:
    """Direct recursive interpolated Kneser-Ney, written from the textbook formula."""

    def __init__(self, corpus, order):
        self.order = order
        sents = [(BOS,) + tuple(s) + (EOS,) for s in corpus]
        raw = [Counter() for _ in range(order + 1)]
        for s in sents:
            for n in range(1, order + 1):
                for k in range(len(s) - n + 1):
                    raw[n][s[k : k + n]] += 1
        self.vocab = {w for s in sents for w in s} | {UNK}
        self.counts = [None] * (order + 1)
        self.counts[order] = dict(raw[order])
        for n in range(order - 1, 0, -1):
            cont = Counter(g[1:] for g in raw[n + 1])
            self.counts[n] = {g: (c if g[0] == BOS else cont[g]) for g, c in raw[n].items()}
            self.counts[n] = {g: c for g, c in self.counts[n].items() if c > 0}
        self.counts[1].pop((BOS,), None)
        self.D = []
        for n in range(order + 1):
            if n == 0:
                self.D.append(None)
                continue
            vals = list(self.counts[n].values())
            n1, n2 = vals.count(1), vals.count(2)
            self.D.append(n1 / (n1 + 2 * n2) if n1 and n2 else 0.5)

    def p(self, h, w):
        n = len(h) + 1
        a, D = self.counts[n], self.D[n]
        denom = sum(c for g, c in a.items() if g[:-1] == h)
        types = sum(1 for g in a if g[:-1] == h)
        if n == 1:
            lower = 1.0 / (len(self.vocab) - 1)
        elif denom == 0:
            return self.p(h[1:], w)
        else:
            lower = self.p(h[1:], w)
        return max(a.get(h + (w,), 0) - D, 0) / denom + D * types / denom * lower

    def sentence_logprob(self, sent):
        s = (BOS,) + tuple(sent) + (EOS,)
        total = 0.0
        for k in range(1, len(s)):
            h = s[max(0, k - self.order + 1) : k]
            w = s[k] if s[k] in self.vocab else UNK
            total += math.log10(self.p(h, w))
        return total


def random_corpus(rng, n, alphabet="abcd"):
    return [[rng.choice(alphabet) for _ in range(rng.randint(1, 6))] for _ in range(n)]


def test_matches_interpolated_formula():
    rng = random.Random(1)
    for order in (1, 2, 3, 4):
        for _ in range(4):
            corpus = random_corpus(rng, 12)
            lm = train_lm(corpus, order)
            oracle = InterpolatedKN(corpus, order)
            for sent in corpus[:5] + random_corpus(rng, 5, "abcde"):
                assert lm.sentence_logprob(sent) == pytest.approx(oracle.sentence_logprob(sent), abs=1e-9)


def test_two_sentence_bigram_by_hand():
    # <s> a b </s> and <s> a c </s>
    lm = train_lm([["a", "b"], ["a", "c"]], 2)
    # bigram counts: (<s> a)=2, (a b)=1, (a c)=1, (b </s>)=1, (c </s>)=1 -> n1=4, n2=1, D2=4/6
    # unigram continuation counts: a=1, b=1, c=1, </s>=2 -> n1=3, n2=1, D1=3/5
    d1, d2 = 3 / 5, 4 / 6
    V = 5  # a b c </s> <unk>
    p1 = lambda c: max(c - d1, 0) / 5 + d1 * 4 / 5 / V
    p_b_given_a = (1 - d2) / 2 + d2 * 2 / 2 * p1(1)
    lp, _ = lm.score((lm.index["a"],), "b")
    assert lp == pytest.approx(math.log10(p_b_given_a), abs=1e-12)
    p_unk = p1(0)
    assert lm.score((), "zzz")[0] == pytest.approx(math.log10(p_unk), abs=1e-12)


def test_unigram_unknown_mass():
    lm = train_lm([["a", "a", "a"]], 1)
    pa = 10 ** lm.score((), "a")[0]
    pu = 10 ** lm.score((), "q")[0]
    assert pa > pu > 0


def test_normalization_random_contexts():
    rng = random.Random(7)
    corpus = random_corpus(rng, 40, "abcdefg")
    for order in range(1, 6):
        lm = train_lm(corpus, order)
        ids = lm.predictive_vocab()
        for _ in range(20):
            hist = (lm.bos,) + tuple(rng.choice(ids[:-1]) for _ in range(rng.randint(0, order)))
            state = lm._minimize(hist)
            total = sum(10 ** lm.score_id(state, w)[0] for w in ids)
            assert total == pytest.approx(1.0, abs=1e-6)


def test_backoff_identity():
    lm = train_lm([["a", "b"], ["b", "c"], ["c", "a"]], 2)
    ctx = (lm.index["a"],)
    w = lm.index["a"]
    assert ctx + (w,) not in lm.prob
    lp, _ = lm.score_id(ctx, w)
    assert lp == pytest.approx(lm.bow[ctx] + lm.prob[(w,)])


def test_sentence_score_telescopes():
    lm = train_lm(random_corpus(random.Random(2), 30), 3)
    sent = ["a", "b", "c", "a"]
    state, total = lm.begin(), 0.0
    for u in sent:
        lp, state = lm.score(state, u)
        total += lp
    total += lm.end_score(state)
    assert total == pytest.approx(lm.sentence_logprob(sent))


def test_training_perplexity_not_worse_with_order():
    corpus = random_corpus(random.Random(3), 60)
    ppl = [train_lm(corpus, n).perplexity(corpus) for n in range(1, 6)]
    assert all(b <= a + 1e-9 for a, b in zip(ppl, ppl[1:]))


def test_arpa_roundtrip_byte_identical(tmp_path):
    lm = train_lm(random_corpus(random.Random(4), 50), 4)
    text = lm.to_arpa()
    back = NGramLM.from_arpa(text)
    assert back.to_arpa() == text
    path = tmp_path / "lm.arpa"
    lm.write_arpa(path)
    again = NGramLM.read_arpa(path)
    assert again.sentence_logprob(["a", "b"]) == pytest.approx(lm.sentence_logprob(["a", "b"]))
    assert "\\data\\" in text and text.rstrip().endswith("\\end\\")


def test_errors_and_degenerate_counts():
    with pytest.raises(EmptyCorpus):
        train_lm([], 3)
    with pytest.raises(ValueError):
        train_lm([["a"]], 0)
    lm = train_lm([["a"]], 3)  # no count-of-counts: falls back to D = 0.5
    assert lm.sentence_logprob(["a"]) < 0


def test_states_are_equal_for_equal_distributions():
    lm = train_lm([["a", "b", "c"], ["d", "b", "c"]], 3)
    s1 = lm.score(lm.score(lm.begin(), "x")[1], "y")[1]
    s2 = lm.score(lm.score(lm.begin(), "z")[1], "y")[1]
    assert s1 == s2
