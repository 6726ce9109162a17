import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adlex.corpus import Dataset, Transcript
from adlex.divergence import SmoothedUnigramModel, group_divergence, jaccard, jm_probability, kl_divergence
from adlex.errors import BothEmpty, EmptyModel, ZeroDenominator


def test_jaccard_examples():
    assert jaccard({"a", "b", "c"}, {"b", "c", "d"}) == 0.5
    assert jaccard({"a"}, {"a"}) == 1.0
    assert jaccard({"a"}, {"b"}) == 0.0
    with pytest.raises(BothEmpty):
        jaccard(set(), set())


def test_jm_probability_examples():
    m = SmoothedUnigramModel.build("a b".split(), "a b c".split(), 0.2)
    assert jm_probability(m, "a") == pytest.approx(0.8 * 0.5 + 0.2 / 3, abs=1e-15)
    assert jm_probability(m, "zzz") == 0.0
    assert jm_probability(SmoothedUnigramModel.build("a b".split(), "a b c".split(), 0.0), "a") == 0.5
    assert jm_probability(SmoothedUnigramModel.build("a b".split(), "a b c".split(), 1.0), "a") == pytest.approx(1 / 3)
    with pytest.raises(EmptyModel):
        jm_probability(SmoothedUnigramModel.build([], "a".split(), 0.2), "a")


def test_model_invariants():
    with pytest.raises(ValueError):
        SmoothedUnigramModel({"a": 2}, 2, {"a": 1}, 1, 0.2)
    with pytest.raises(ValueError):
        SmoothedUnigramModel.build(["a"], ["a"], 1.5)


def test_kl_examples():
    # P = [1, 0], Q = [0.5, 0.5] over {a, b}
    p = SmoothedUnigramModel.build(["a"], ["a", "b"], 0.0)
    q = SmoothedUnigramModel.build(["a", "b"], ["a", "b"], 0.0)
    assert kl_divergence(p, q, {"a", "b"}) == pytest.approx(math.log(2), abs=1e-15)
    assert kl_divergence(q, q, {"a", "b"}) == 0.0
    assert kl_divergence(p, q, {"a", "b"}, base=2) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ZeroDenominator):
        kl_divergence(q, p, {"a", "b"})


def _ds(control, dementia):
    ts = [Transcript(f"c{i}", tuple(t.split()), 0, None) for i, t in enumerate(control)]
    ts += [Transcript(f"d{i}", tuple(t.split()), 1, None) for i, t in enumerate(dementia)]
    return Dataset(tuple(ts))


def test_group_divergence_identical_and_disjoint():
    same = group_divergence(_ds(["the boy ."], ["the boy ."]))
    assert same["jaccard"] == 1.0 and same["kl_cd"] == 0.0 and same["kl_dc"] == 0.0
    dis = group_divergence(_ds(["a b b"], ["c d"]))
    assert dis["jaccard"] == 0.0
    # brute force: collection a:1 b:2 c:1 d:1 (|S|=5)
    s = {"a": .2, "b": .4, "c": .2, "d": .2}
    pc = {w: 0.8 * {"a": 1 / 3, "b": 2 / 3}.get(w, 0) + 0.2 * s[w] for w in s}
    pd = {w: 0.8 * {"c": .5, "d": .5}.get(w, 0) + 0.2 * s[w] for w in s}
    assert dis["kl_cd"] == pytest.approx(sum(pc[w] * math.log(pc[w] / pd[w]) for w in s), abs=1e-12)
    assert dis["kl_dc"] == pytest.approx(sum(pd[w] * math.log(pd[w] / pc[w]) for w in s), abs=1e-12)
    assert dis["kl_cd"] != dis["kl_dc"]


def test_punctuation_is_not_vocabulary():
    res = group_divergence(_ds(["a ."], ["a ?"]))
    assert res["jaccard"] == 1.0 and res["kl_cd"] == 0.0


@given(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=20),
       st.lists(st.sampled_from("abcdef"), min_size=1, max_size=20),
       st.floats(0.01, 1.0))
def test_kl_non_negative_and_normalised(d1, d2, alpha):
    coll = d1 + d2
    m1 = SmoothedUnigramModel.build(d1, coll, alpha)
    m2 = SmoothedUnigramModel.build(d2, coll, alpha)
    assert sum(jm_probability(m1, w) for w in m1.vocabulary) == pytest.approx(1.0, abs=1e-9)
    assert kl_divergence(m1, m2, m1.vocabulary) >= 0.0
    assert kl_divergence(m1, m1, m1.vocabulary) == 0.0
