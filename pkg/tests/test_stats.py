import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from adlex.errors import DegenerateGroup, DomainError
from adlex.stats import bh_adjust, point_biserial, regularized_incomplete_beta, t_test_independent
from oracles import BH_CASES, T_TEST_CASES


@pytest.mark.parametrize("x, y, variant, t, df, p", T_TEST_CASES)
def test_t_test_matches_reference_table(x, y, variant, t, df, p):
    r = t_test_independent(x, y, variant)
    assert r.t == pytest.approx(t, abs=1e-6)
    assert r.df == pytest.approx(df, abs=1e-6)
    assert r.p == pytest.approx(p, abs=1e-6)


def test_t_test_worked_examples():
    r = t_test_independent([1, 2, 3], [1, 2, 3])
    assert (r.t, r.p) == (0.0, 1.0)
    s = t_test_independent([1, 2, 3], [4, 5, 6], "student")
    assert s.t == pytest.approx(-3.674, abs=1e-3) and s.df == 4 and s.p == pytest.approx(0.0213, abs=1e-4)
    w = t_test_independent([1, 2, 3], [4, 5, 6], "welch")
    assert w.t == pytest.approx(s.t, abs=1e-12) and w.df == pytest.approx(4.0, abs=1e-12)


def test_t_test_constant_samples():
    r = t_test_independent([2, 2, 2], [5, 5])
    assert r.t == -math.inf and r.p == 0.0
    r = t_test_independent([2, 2], [2, 2, 2])
    assert (r.t, r.p) == (0.0, 1.0)


def test_t_test_needs_two_per_group():
    with pytest.raises(DegenerateGroup):
        t_test_independent([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        t_test_independent([1, 2], [1, 2], "bogus")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=12),
       st.lists(st.floats(-100, 100), min_size=2, max_size=12),
       st.sampled_from(["student", "welch"]))
def test_t_test_antisymmetric(x, y, variant):
    a, b = t_test_independent(x, y, variant), t_test_independent(y, x, variant)
    assert a.t == -b.t or (math.isnan(a.t) and math.isnan(b.t))
    assert a.p == pytest.approx(b.p, abs=1e-12)
    assert 0.0 <= a.p <= 1.0


def test_incomplete_beta_values():
    assert regularized_incomplete_beta(2, 3, 0.0) == 0.0
    assert regularized_incomplete_beta(2, 3, 1.0) == 1.0
    assert regularized_incomplete_beta(1, 1, 0.5) == pytest.approx(0.5, abs=1e-12)
    assert regularized_incomplete_beta(2, 3, 0.3) == pytest.approx(0.3483, abs=1e-4)
    with pytest.raises(DomainError):
        regularized_incomplete_beta(0, 1, 0.5)
    with pytest.raises(DomainError):
        regularized_incomplete_beta(1, 1, 1.5)


def test_incomplete_beta_against_scipy_and_symmetry():
    rng = np.random.default_rng(0)
    for a, b, x in zip(rng.uniform(0.1, 30, 300), rng.uniform(0.1, 30, 300), rng.uniform(0, 1, 300)):
        v = regularized_incomplete_beta(a, b, x)
        assert v == pytest.approx(special.betainc(a, b, x), abs=1e-10)
        assert v == pytest.approx(1.0 - regularized_incomplete_beta(b, a, 1.0 - x), abs=1e-10)


@pytest.mark.parametrize("p, expected", BH_CASES)
def test_bh_matches_step_up_table(p, expected):
    np.testing.assert_allclose(bh_adjust(p), expected, rtol=0, atol=1e-12)


def test_bh_worked_example():
    np.testing.assert_allclose(bh_adjust([0.01, 0.02, 0.03, 0.04]), [0.04] * 4, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.randoms(use_true_random=False))
def test_bh_properties(p, rnd):
    adj = bh_adjust(p)
    assert np.all(adj >= np.asarray(p) - 1e-15) and np.all(adj <= 1.0)
    perm = list(range(len(p)))
    rnd.shuffle(perm)
    np.testing.assert_array_equal(bh_adjust([p[i] for i in perm]), adj[perm])
    order = np.argsort(p, kind="mergesort")
    assert np.all(np.diff(adj[order]) >= -1e-15)


def test_point_biserial_examples():
    assert point_biserial([1, 2, 3, 4], [0, 0, 1, 1]).r == pytest.approx(0.894427191, abs=1e-9)
    c = point_biserial([3, 3, 3, 3], [0, 1, 0, 1])
    assert (c.r, c.p) == (0.0, 1.0)


def test_point_biserial_equals_pearson_and_flips():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(3, 40))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        x = rng.normal(size=n) + y * rng.normal()
        c = point_biserial(x, y)
        assert c.r == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)
        assert point_biserial(x, 1 - y).r == pytest.approx(-c.r, abs=1e-15)
        assert -1.0 <= c.r <= 1.0 and 0.0 <= c.p <= 1.0
