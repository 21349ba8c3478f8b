from __future__ import annotations

import itertools
import math
import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualinf.metrics.agreement import cohen_kappa, jaccard, mean_jaccard
from dualinf.metrics.meteor import (
    SynonymTable,
    align,
    count_chunks,
    load_synonyms,
    meteor,
    porter_stem,
    tokenize,
)
from dualinf.metrics.similarity import bertscore, sentence_similarity

# (candidate, reference, value) computed by hand from P, R, Fmean and the chunk penalty
METEOR_HAND = [
    ("fever", "fever", 0.5),                                    # m=1, one chunk
    ("the cat sat", "the cat sat", 1 - 0.5 / 27),               # 0.98148...
    ("sat the cat", "the cat sat", 23 / 27),                    # 2 chunks: penalty 4/27
    ("a b a b", "a b", (10 / 11) * (1 - 0.5 / 8)),              # P=1/2, R=1, 1 chunk
    ("fevers", "fever", 0.5),                                   # stem stage
    ("chest pain", "left chest pain radiating", (5 / 9.5) * (1 - 0.5 / 8)),
    ("fever cough", "cough fever", 1 - 0.5),                    # 2 chunks of 1: penalty .5
    ("nausea", "headache", 0.0),
]


@pytest.mark.parametrize("cand, ref, value", METEOR_HAND)
def test_meteor_hand_values(cand, ref, value):
    assert abs(meteor(cand, ref) - value) <= 1e-9


def test_meteor_identity_formula():
    for text in ["a", "a b", "shortness of breath on exertion"]:
        m = len(tokenize(text))
        assert meteor(text, text) == pytest.approx(1 - 0.5 * (1 / m) ** 3, abs=1e-12)


def test_meteor_empty_and_tokenizer():
    assert meteor("", "fever") == 0.0
    assert meteor("...", "fever") == 0.0
    assert tokenize("Left-sided, CHEST pain!") == ["left", "sided", "chest", "pain"]


def test_synonym_stage(tmp_path):
    p = tmp_path / "syn.tsv"
    p.write_text("dyspnea\tbreathlessness\nbreathlessness\tshortness\n\n")
    table = load_synonyms(p)
    assert meteor("dyspnea", "breathlessness") == 0.0
    assert meteor("dyspnea", "breathlessness", synonyms=table) == 0.5
    assert table.group(porter_stem("shortness")) == table.group(porter_stem("dyspnea"))
    bad = tmp_path / "bad.tsv"
    bad.write_text("only-one-column\n")
    with pytest.raises(ValueError):
        load_synonyms(bad)


def test_exact_stage_preferred_over_stem():
    # "fever" must pair with "fever", not with "fevers"
    pairs = align(["fever", "fevers"], ["fevers", "fever"])
    assert sorted(pairs) == [(0, 1), (1, 0)]


def test_count_chunks():
    assert count_chunks([]) == 0
    assert count_chunks([(0, 0), (1, 1), (2, 2)]) == 1
    assert count_chunks([(0, 2), (1, 0), (2, 1)]) == 2
    assert count_chunks([(0, 0), (2, 1)]) == 2


def _stage(a, b, syn):
    if a == b:
        return 0
    if porter_stem(a) == porter_stem(b):
        return 1
    if syn is not None:
        ga, gb = syn.group(porter_stem(a)), syn.group(porter_stem(b))
        if ga is not None and ga == gb:
            return 2
    return None


def brute_force_meteor(cand_text, ref_text, syn=None):
    """Every partial matching; lexicographically most exact, stem, synonym pairs; then fewest chunks."""
    cand, ref = tokenize(cand_text), tokenize(ref_text)
    if not cand or not ref:
        return 0.0
    best = None
    for k in range(min(len(cand), len(ref)) + 1):
        for ci in itertools.combinations(range(len(cand)), k):
            for rj in itertools.permutations(range(len(ref)), k):
                stages = [_stage(cand[i], ref[j], syn) for i, j in zip(ci, rj)]
                if any(s is None for s in stages):
                    continue
                counts = tuple(sum(1 for s in stages if s == x) for x in range(3))
                pairs = list(zip(ci, rj))
                chunks = 0
                for n, (i, j) in enumerate(pairs):
                    if n == 0 or i != pairs[n - 1][0] + 1 or j != pairs[n - 1][1] + 1:
                        chunks += 1
                key = (counts, -chunks)
                if best is None or key > best[0]:
                    best = (key, k, chunks)
    _, m, chunks = best
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    return 10 * p * r / (r + 9 * p) * (1 - 0.5 * (chunks / m) ** 3)


VOCAB = ["fever", "fevers", "cough", "coughing", "pain", "the", "of", "dyspnea", "breathlessness"]


def test_meteor_against_brute_force():
    rng = random.Random(11)
    syn = SynonymTable([("dyspnea", "breathlessness")])
    for _ in range(300):
        cand = " ".join(rng.choices(VOCAB, k=rng.randint(1, 5)))
        ref = " ".join(rng.choices(VOCAB, k=rng.randint(1, 5)))
        for table in (None, syn):
            assert abs(meteor(cand, ref, synonyms=table) - brute_force_meteor(cand, ref, table)) <= 1e-9, (cand, ref)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=5),
       st.lists(st.sampled_from(VOCAB), min_size=1, max_size=5))
def test_meteor_bounds_and_nonmatching_append(cand, ref):
    s = meteor(" ".join(cand), " ".join(ref))
    assert 0.0 <= s <= 1.0
    m_before = len(align(cand, ref))
    assert len(align(cand + ["zzzz"], ref)) == m_before


def test_meteor_long_repetitive_input_is_fast():
    import time

    text = "; ".join(["pain in the left side of the chest"] * 6)
    t = time.perf_counter()
    meteor(text, text.replace("left", "right"))
    assert time.perf_counter() - t < 5


# --- BERTScore / cosine ----------------------------------------------------

def brute_force_bertscore(c, r):
    def cos(u, v):
        return sum(a * b for a, b in zip(u, v)) / math.sqrt(sum(a * a for a in u) * sum(b * b for b in v))

    p = sum(max(cos(x, y) for y in r) for x in c) / len(c)
    rec = sum(max(cos(y, x) for x in c) for y in r) / len(r)
    return p, rec, 2 * p * rec / (p + rec)


def test_bertscore_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(20):
        dim = int(rng.integers(2, 6))
        c = rng.standard_normal((int(rng.integers(1, 5)), dim))
        r = rng.standard_normal((int(rng.integers(1, 5)), dim))
        got = bertscore(c, r)
        want = brute_force_bertscore(c.tolist(), r.tolist())
        assert np.allclose(got, want, atol=1e-9, rtol=0)


def test_bertscore_cases():
    e = np.eye(3)
    assert bertscore(e, e) == pytest.approx((1.0, 1.0, 1.0))
    assert bertscore(e[:1], e[1:2])[2] == 0.0
    with pytest.raises(ValueError):
        bertscore(np.zeros((1, 3)), e)
    with pytest.raises(ValueError):
        bertscore(e, np.eye(2))


def test_sentence_similarity():
    v = np.array([1.0, 2.0, 2.0])
    assert sentence_similarity(v, v) == pytest.approx(1.0)
    assert sentence_similarity([1, 0], [0, 1]) == 0.0
    # (1,2,2).(2,0,1) = 4; norms 3 and sqrt(5)
    assert sentence_similarity(v, [2.0, 0.0, 1.0]) == pytest.approx(4 / (3 * math.sqrt(5)))
    with pytest.raises(ValueError):
        sentence_similarity([0, 0], [1, 0])


# --- agreement --------------------------------------------------------------

def test_jaccard_values():
    assert jaccard({"a", "b"}, {"b", "c"}) == 1 / 3
    assert jaccard({"a"}, {"a"}) == 1.0
    assert jaccard({"a"}, {"b"}) == 0.0
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert jaccard(set(), set()) == 1.0
        assert w
    assert mean_jaccard([({"a"}, {"a"}), ({"a", "b"}, {"b", "c"})]) == pytest.approx(2 / 3)


def test_cohen_kappa_values():
    assert cohen_kappa(list("xxyy"), list("xyxy")) == 0.0
    assert cohen_kappa(list("xyxy"), list("xyxy")) == 1.0
    assert cohen_kappa(list("xxxx"), list("xxxx")) == 1.0
    # po = 3/4, pe = (3/4*1/2 + 1/4*1/2) = 1/2 -> 0.5
    assert cohen_kappa(list("xxxy"), list("xxyy")) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        cohen_kappa(list("xx"), list("x"))
    # pe = 1*0 + 0*1 = 0 and po = 0
    assert cohen_kappa(list("xxxx"), list("yyyy")) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("abc")), min_size=1, max_size=12))
def test_agreement_symmetry(pairs):
    a, b = [x for x, _ in pairs], [y for _, y in pairs]
    assert jaccard(set(a), set(b)) == jaccard(set(b), set(a))
    try:
        k = cohen_kappa(a, b)
    except ValueError:
        return
    assert k == pytest.approx(cohen_kappa(b, a))
    assert -1.0 <= k <= 1.0
