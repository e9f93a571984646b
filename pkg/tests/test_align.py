import random
from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pivotsmt.align import (
    NULL,
    AlignmentMatrix,
    DimensionMismatch,
    EmptyBitext,
    LengthMismatch,
    align_bitext,
    check_bitext,
    corpus_loglik,
    symmetrize_gdfa,
    train_model1,
    viterbi_align,
)


def dict_model1(bitext, iterations):
    """Textbook Model 1 EM over plain dictionaries."""
    tgt_vocab = {t for _, ts in bitext for t in ts}
    cooc = defaultdict(set)
    for ss, ts in bitext:
        for s in [NULL] + list(ss):
            cooc[s].update(ts)
    t = {(s, w): 1.0 / len(ws) for s, ws in cooc.items() for w in ws}
    for _ in range(iterations):
        count = defaultdict(float)
        total = defaultdict(float)
        for ss, ts in bitext:
            srcs = [NULL] + list(ss)
            for w in ts:
                z = sum(t[(s, w)] for s in srcs)
                for s in srcs:
                    c = t[(s, w)] / z
                    count[(s, w)] += c
                    total[s] += c
        t = {k: max(count[k], 1e-12) for k in t}
        norm = defaultdict(float)
        for (s, w), v in t.items():
            norm[s] += v
        t = {(s, w): v / norm[s] for (s, w), v in t.items()}
    assert tgt_vocab
    return t


def random_bitext(rng, n=8):
    out = []
    for _ in range(n):
        a = [rng.choice("abcde") for _ in range(rng.randint(1, 5))]
        b = [rng.choice("vwxyz") for _ in range(rng.randint(1, 5))]
        out.append((a, b))
    return out


def test_model1_matches_dictionary_em():
    rng = random.Random(5)
    for _ in range(10):
        bitext = random_bitext(rng)
        table = train_model1(bitext, 6)
        oracle = dict_model1(bitext, 6)
        got = table.probs
        assert set(got) == set(oracle)
        for k, v in oracle.items():
            assert got[k] == pytest.approx(v, abs=1e-9)


def test_model1_prefers_consistent_translation():
    table = train_model1([(["a"], ["x"]), (["a", "b"], ["x", "y"])], 10)
    assert table.prob("a", "x") > table.prob("a", "y")


def test_model1_zero_iterations_uniform():
    table = train_model1([(["a", "b"], ["x", "y", "z"])], 0)
    assert table.prob("a", "x") == pytest.approx(1 / 3)
    assert table.prob("b", "z") == pytest.approx(1 / 3)


def test_model1_single_pair_rows_normalized():
    table = train_model1([(["a"], ["x"])], 5)
    assert table.prob("a", "x") == pytest.approx(1.0)
    assert table.prob(NULL, "x") == pytest.approx(1.0)


def test_model1_likelihood_monotone_and_rows_stochastic():
    rng = random.Random(9)
    for _ in range(10):
        bitext = random_bitext(rng, 12)
        table = train_model1(bitext, 8)
        ll = table.loglik
        assert all(b >= a - 1e-9 for a, b in zip(ll, ll[1:]))
        assert corpus_loglik(bitext, table) == pytest.approx(ll[-1], abs=1e-6)
        for s, v in table.row_sums().items():
            assert v == pytest.approx(1.0, abs=1e-6)


def test_model1_errors():
    with pytest.raises(EmptyBitext):
        train_model1([], 3)
    with pytest.raises(LengthMismatch) as err:
        check_bitext(["a", "b"], ["x"])
    assert err.value.line == 2


def test_viterbi_argmax_per_column():
    table = train_model1([(["a"], ["x"]), (["b"], ["y"]), (["a", "b"], ["x", "y"])], 10)
    (al,) = viterbi_align([(["a", "b"], ["x", "y"])], table)
    assert al.links == {(0, 0), (1, 1)}


def test_viterbi_empty_target_and_ties():
    table = train_model1([(["a", "b"], ["x", "y"])], 0)
    al = viterbi_align([(["a", "b"], []), (["a", "b"], ["x", "y"])], table)
    assert al[0].links == frozenset()
    assert al[1].links == {(0, 0), (0, 1)}


def test_gdfa_examples():
    m = lambda links, n=2: AlignmentMatrix(frozenset(links), n, n)
    assert symmetrize_gdfa(m({(0, 0), (1, 1)}), m({(0, 0), (1, 1)})).links == {(0, 0), (1, 1)}
    assert symmetrize_gdfa(m({(0, 0)}), m({(0, 0), (1, 1)})).links == {(0, 0), (1, 1)}
    # no shared link: final-and adds directional links whose endpoints are both free
    assert symmetrize_gdfa(m({(0, 0)}, 3), m({(2, 2)}, 3)).links == {(0, 0), (2, 2)}
    # a second link on an already covered row and column is not added
    assert symmetrize_gdfa(m({(0, 0), (1, 1)}, 3), m({(0, 0), (1, 1), (0, 1)}, 3)).links == {(0, 0), (1, 1)}


def test_gdfa_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        symmetrize_gdfa(AlignmentMatrix(frozenset(), 2, 3), AlignmentMatrix(frozenset(), 3, 2))


@st.composite
def alignment_pair(draw):
    n = draw(st.integers(1, 6))
    m = draw(st.integers(1, 6))
    cells = st.tuples(st.integers(0, n - 1), st.integers(0, m - 1))
    a = draw(st.frozensets(cells, max_size=n * m))
    b = draw(st.frozensets(cells, max_size=n * m))
    return AlignmentMatrix(a, n, m), AlignmentMatrix(b, n, m)


@settings(max_examples=300, deadline=None)
@given(alignment_pair())
def test_gdfa_between_intersection_and_union(pair):
    fwd, rev = pair
    sym = symmetrize_gdfa(fwd, rev)
    assert fwd.links & rev.links <= sym.links <= fwd.links | rev.links
    assert symmetrize_gdfa(fwd, rev) == sym


def test_moses_roundtrip():
    al = AlignmentMatrix(frozenset({(0, 1), (2, 0)}), 3, 2)
    assert al.to_moses() == "0-1 2-0"
    assert AlignmentMatrix.from_moses(al.to_moses(), 3, 2) == al
    with pytest.raises(ValueError):
        AlignmentMatrix(frozenset({(3, 0)}), 3, 2)


def test_align_bitext_deterministic():
    bitext = random_bitext(random.Random(2), 20)
    src, tgt = [s for s, _ in bitext], [t for _, t in bitext]
    assert align_bitext(src, tgt)[4] == align_bitext(src, tgt)[4]
