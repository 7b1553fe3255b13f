import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coxknock.data import BINARY, CONTINUOUS, Dataset
from coxknock.kfwer import (DerandomizedNB, FilterConfig, FixedV, Prop1,
                            aggregate_tail_exact, base_knockoff_selection, compute_v_derandomized,
                            compute_v_single, knockoff_w_stats, nb_tail, nb_tail_exact,
                            threshold_select)

from oracles import nb_tail_binomial, threshold_select_bruteforce


def stats(w, chi):
    w = np.asarray(w, dtype=float)
    chi = np.asarray(chi, dtype=np.int64)
    z = np.where(chi >= 0, w, w / 2)
    zt = np.where(chi <= 0, w, w / 2)
    return knockoff_w_stats(z, zt)


# --- W statistics ----------------------------------------------------------

@pytest.mark.parametrize("z, zt, w, chi", [(3, 1, 3, 1), (1, 3, 3, -1), (2, 2, 2, 0)])
def test_w_stats_examples(z, zt, w, chi):
    s = knockoff_w_stats([z], [zt])
    assert s.w[0] == w and s.chi[0] == chi


def test_w_stats_rejects_negative_or_mismatched():
    with pytest.raises(ValueError):
        knockoff_w_stats([-1.0], [0.0])
    with pytest.raises(ValueError):
        knockoff_w_stats([1.0, 2.0], [0.0])


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=20))
def test_w_stats_invariants(pairs):
    z, zt = map(np.array, zip(*pairs))
    s = knockoff_w_stats(z, zt)
    assert np.all(s.w >= 0)
    assert np.all(s.w == np.maximum(z, zt))
    assert np.all((s.chi == 0) == (z == zt))


# --- negative-binomial tails ------------------------------------------------

@pytest.mark.parametrize("v, k, expected", [(0, 1, 0.0), (1, 2, 0.25), (2, 2, 0.5), (1, 5, 0.03125)])
def test_nb_tail_examples(v, k, expected):
    assert nb_tail(v, k) == expected


@given(st.integers(0, 10), st.integers(1, 10))
def test_nb_tail_matches_binomial_oracle(v, k):
    assert nb_tail_exact(v, k) == nb_tail_binomial(v, k)


@given(st.integers(1, 10))
def test_nb_tail_increasing_in_v(k):
    tails = [nb_tail_exact(v, k) for v in range(8)]
    assert all(a < b for a, b in zip(tails, tails[1:]))


@pytest.mark.parametrize("k, alpha, v", [(5, 0.1, 1), (2, 0.1, 0), (4, 0.1, 1), (3, 0.1, 0)])
def test_compute_v_single_examples(k, alpha, v):
    assert compute_v_single(k, alpha) == v


@given(st.integers(1, 12), st.floats(0.01, 0.6), st.floats(0.0, 0.3))
def test_compute_v_single_monotone(k, alpha, extra):
    v = compute_v_single(k, alpha)
    assert nb_tail_exact(v, k) <= Fraction(alpha) < nb_tail_exact(v + 1, k)
    assert compute_v_single(k + 1, alpha) >= v
    assert compute_v_single(k, min(alpha + extra, 0.99)) >= v


@pytest.mark.parametrize("k, alpha, eta, M, v", [(1, 0.5, 1.0, 1, 1), (1, 0.05, 1.0, 1, 0), (2, 0.1, 0.8, 30, 1)])
def test_compute_v_derandomized_examples(k, alpha, eta, M, v):
    assert compute_v_derandomized(k, alpha, eta, M) == v


def test_aggregate_tail_uses_exact_ceiling():
    # ceil(0.8 * 30 * 2) = 48 exactly, although 0.8 * 30 * 2 == 48.00000000000001 in floats
    expected = 1 - sum(Fraction(math.comb(i + 29, i), 2 ** (i + 30)) for i in range(48))
    assert aggregate_tail_exact(1, 2, 0.8, 30) == expected


def test_v_validation():
    with pytest.raises(ValueError):
        compute_v_single(0, 0.1)
    with pytest.raises(ValueError):
        compute_v_derandomized(2, 0.1, 0.0, 30)


# --- thresholding -----------------------------------------------------------

W5 = [5, 4, 3, 2, 1]
CHI5 = [1, -1, 1, -1, 1]


def test_threshold_examples():
    r1 = threshold_select(stats(W5, CHI5), 1)
    assert r1.threshold == 4 and r1.selected == {0}
    r2 = threshold_select(stats(W5, CHI5), 2)
    assert r2.threshold == 2 and r2.selected == {0, 2}
    r0 = threshold_select(stats([5, 4, 3], [1, 1, 1]), 0)
    assert r0.selected == {0, 1, 2}


def test_threshold_all_negative_selects_nothing():
    assert threshold_select(stats([3, 2, 1], [-1, -1, -1]), 0).selected == frozenset()


def test_threshold_tied_negative_blocks_positive():
    s = stats([2.0, 2.0, 1.0], [1, -1, 1])
    assert threshold_select(s, 1).selected == frozenset()
    assert threshold_select(s, 0).selected == frozenset()


def test_threshold_zero_sign_never_selected_or_counted():
    s = stats([5.0, 4.0, 3.0], [0, -1, 1])
    r = threshold_select(s, 2)
    assert 0 not in r.selected and r.n_negatives_above == 1


instances = st.integers(1, 20).flatmap(lambda p: st.tuples(
    st.lists(st.integers(0, 6), min_size=p, max_size=p),
    st.lists(st.sampled_from([-1, 0, 1]), min_size=p, max_size=p),
    st.integers(0, 5)))


@settings(max_examples=300)
@given(instances)
def test_threshold_matches_bruteforce(inst):
    w, chi, v = inst
    w = [x + 0.5 for x in w]  # positive, with frequent ties
    got = threshold_select(stats(w, chi), v).selected
    assert got == threshold_select_bruteforce(w, chi, v)


@settings(max_examples=200)
@given(instances)
def test_threshold_monotone_in_v(inst):
    w, chi, v = inst
    w = [x + 0.5 for x in w]
    s = stats(w, chi)
    assert threshold_select(s, v).selected <= threshold_select(s, v + 1).selected


@settings(max_examples=200)
@given(instances, st.randoms())
def test_threshold_permutation_invariant(inst, rnd):
    w, chi, v = inst
    w = [x + 0.5 for x in w]
    perm = list(range(len(w)))
    rnd.shuffle(perm)
    a = threshold_select(stats(w, chi), v).selected
    b = threshold_select(stats([w[i] for i in perm], [chi[i] for i in perm]), v).selected
    assert {perm[j] for j in b} == a


@settings(max_examples=200)
@given(instances)
def test_selected_are_positive_above_threshold(inst):
    w, chi, v = inst
    w = [x + 0.5 for x in w]
    r = threshold_select(stats(w, chi), v)
    for j in r.selected:
        assert chi[j] == 1 and w[j] >= r.threshold


# --- config and the composed base procedure ---------------------------------

def test_filter_config_policies():
    assert FilterConfig(5, 0.1).resolve_v() == 1
    assert FilterConfig(2, 0.1, DerandomizedNB(0.8, 30)).resolve_v() == 1
    assert FilterConfig(2, 0.1, FixedV(3)).resolve_v() == 3
    assert isinstance(FilterConfig().v_policy, Prop1)
    with pytest.raises(ValueError):
        FilterConfig(0, 0.1)
    with pytest.raises(ValueError):
        FilterConfig(2, 1.5)


@pytest.fixture(scope="module")
def small_dataset():
    rng = np.random.default_rng(4)
    n = 80
    x = rng.standard_normal((n, 4))
    x[:, 3] = (x[:, 3] > 0).astype(float)
    t = rng.exponential(1.0 / np.exp(1.5 * x[:, 0]))
    c = rng.exponential(2.0, n)
    return Dataset(x, (CONTINUOUS, CONTINUOUS, CONTINUOUS, BINARY), np.minimum(t, c),
                   (t <= c).astype(float), ("a", "b", "c", "d"))


def test_base_selection_deterministic(small_dataset):
    cfg = FilterConfig(2, 0.1, FixedV(1))
    r1 = base_knockoff_selection(small_dataset, 11, cfg)
    r2 = base_knockoff_selection(small_dataset, 11, cfg)
    assert r1.selected == r2.selected
    assert np.array_equal(r1.stats.w, r2.stats.w)
    assert r1.to_json(["a", "b", "c", "d"]) == r2.to_json(["a", "b", "c", "d"])
    assert r1.v_used == 1 and len(r1.stats.w) == 4
