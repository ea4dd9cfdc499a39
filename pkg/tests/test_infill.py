import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from metasaea.infill import (CriterionId, InfillConfig, dpbi_scores, expected_improvement,
                             nd_angle_scores, select_elite, signed_front_distance)
from metasaea.pareto import das_dennis
from metasaea.surrogate import SurrogatePopulation, TruePopulation

TRUE3 = TruePopulation(np.zeros((3, 2)), np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]))
DIRS2 = das_dennis(2, 2)


def sur(Y, S=None, d=2):
    Y = np.asarray(Y, dtype=float)
    S = np.zeros_like(Y) if S is None else np.asarray(S, dtype=float)
    return SurrogatePopulation(np.arange(len(Y) * d, dtype=float).reshape(len(Y), d), Y, S)


def random_case(seed, n_sur=12, n_true=15, m=2):
    rng = np.random.default_rng(seed)
    p_true = TruePopulation(rng.random((n_true, 4)), rng.random((n_true, m)))
    p_sur = SurrogatePopulation(rng.random((n_sur, 4)), rng.random((n_sur, m)) * 1.2 - 0.1,
                                rng.random((n_sur, m)) * 0.2)
    return p_sur, p_true


def test_five_criteria():
    assert len(CriterionId) == 5
    assert [c.name for c in CriterionId] == ["ND_A", "ND_DPBI_CONV", "ND_DPBI_DIV", "EPDI_EXPLORE",
                                             "EPDI_EXPLOIT"]


@pytest.mark.parametrize("crit", list(CriterionId))
def test_single_candidate(crit):
    assert select_elite(crit, sur([[0.3, 0.8]], [[0.1, 0.1]]), TRUE3, DIRS2).tolist() == [0]


class TestDPBI:
    def test_matching_candidate_scores_zero(self):
        p_sur = sur([[0.5, 0.5], [0.4, 0.4]])
        scores = dpbi_scores(p_sur, TRUE3, np.array([0, 1]), DIRS2, theta=1.0)
        assert scores[0] == pytest.approx(0.0, abs=1e-12)
        assert scores[1] > 0
        # hand value: both on the diagonal ray, PBI = ||y||_2
        assert scores[1] == pytest.approx(math.sqrt(0.5) - math.sqrt(0.32), abs=1e-12)

    def test_conv_prefers_lower_pbi(self):
        p_sur = sur([[0.5, 0.5], [0.4, 0.4]])
        assert select_elite(CriterionId.ND_DPBI_CONV, p_sur, TRUE3, DIRS2).tolist() == [1]

    def test_div_restricts_to_least_covered_direction(self):
        # archive front only covers the two axis directions; the diagonal is empty
        p_true = TruePopulation(np.zeros((2, 2)), np.array([[0.0, 1.0], [1.0, 0.0]]))
        p_sur = sur([[-0.05, 0.8], [1.3, 0.6]])
        assert select_elite(CriterionId.ND_DPBI_DIV, p_sur, p_true, DIRS2).tolist() == [1]
        assert select_elite(CriterionId.ND_DPBI_CONV, p_sur, p_true, DIRS2).tolist() == [0]


class TestEPDI:
    def test_closed_form(self):
        mu, sd = 0.3, 0.8
        z = -mu / sd
        assert expected_improvement(mu, sd) == pytest.approx(-mu * norm.cdf(z) + sd * norm.pdf(z), abs=1e-15)

    def test_zero_sigma(self):
        np.testing.assert_allclose(expected_improvement([0.2, -0.3], [0.0, 0.0]), [0.0, 0.3])

    def test_signed_distance(self):
        front = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])
        assert signed_front_distance(np.array([0.45, 0.45]), front) == pytest.approx(-0.1)
        assert signed_front_distance(np.array([0.65, 0.65]), front) == pytest.approx(0.3)

    def test_dominated_zero_sigma_ranks_last(self):
        p_sur = sur([[0.9, 0.9], [0.45, 0.55], [0.7, 0.7]], [[0, 0], [0.01, 0.01], [0, 0]])
        for crit in (CriterionId.EPDI_EXPLORE, CriterionId.EPDI_EXPLOIT):
            order = select_elite(crit, p_sur, TRUE3, DIRS2, k=3)
            assert order[0] == 1

    def test_explore_vs_exploit(self):
        # A: mean just below the front, tiny sigma; B: behind the front, wide sigma
        p_sur = sur([[0.45, 0.45], [0.65, 0.65]], [[0.025, 0.025], [0.4, 0.4]])
        # by hand: exploit EI(A)=0.1000 > EI(B)=0.0524; explore EI(A)=0.1083 < EI(B)=0.4995
        assert select_elite(CriterionId.EPDI_EXPLOIT, p_sur, TRUE3, DIRS2).tolist() == [0]
        assert select_elite(CriterionId.EPDI_EXPLORE, p_sur, TRUE3, DIRS2).tolist() == [1]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(list(CriterionId)), st.integers(0, 10**6), st.integers(1, 5), st.sampled_from([2, 3]))
def test_distinct_in_range(crit, seed, k, m):
    p_sur, p_true = random_case(seed, m=m)
    idx = select_elite(crit, p_sur, p_true, das_dennis(m, 4 if m == 3 else 9), k)
    assert len(idx) == k and len(set(idx.tolist())) == k
    assert np.all((idx >= 0) & (idx < len(p_sur)))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(list(CriterionId)), st.integers(0, 10**6))
def test_order_invariance(crit, seed):
    p_sur, p_true = random_case(seed)
    perm = np.random.default_rng(seed + 1).permutation(len(p_sur))
    # k=1: with k larger than the candidate set the padding follows index order
    a = select_elite(crit, p_sur, p_true, das_dennis(2, 9))
    b = select_elite(crit, p_sur.subset(perm), p_true, das_dennis(2, 9))
    np.testing.assert_array_equal(np.sort(p_sur.x[a], axis=0), np.sort(p_sur.subset(perm).x[b], axis=0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100))
def test_nd_angle_scale_free(seed, c):
    p_sur, p_true = random_case(seed)
    cand = np.arange(len(p_sur))
    base = nd_angle_scores(p_sur, p_true, cand)
    scaled_sur = SurrogatePopulation(p_sur.x, p_sur.y * c, p_sur.sigma * c)
    scaled_true = TruePopulation(p_true.x, p_true.y * c)
    np.testing.assert_allclose(nd_angle_scores(scaled_sur, scaled_true, cand), base, atol=1e-7)


def test_k_out_of_range():
    with pytest.raises(ValueError):
        select_elite(CriterionId.ND_A, sur([[0.1, 0.2]]), TRUE3, DIRS2, k=2)


def test_config_constants():
    cfg = InfillConfig()
    assert (cfg.theta_conv, cfg.theta_div, cfg.sigma_explore, cfg.sigma_exploit) == (1.0, 10.0, 2.0, 0.5)
