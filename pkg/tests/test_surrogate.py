import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from metasaea.problems import ProblemSpec, evaluate_batch, lhs_init
from metasaea.surrogate import (BinnedPrediction, InsufficientDataError, SurrogateConfig, bin_edges, fit,
                                moments, predict, predict_batch)

ZDT1 = ProblemSpec("ZDT1", 10, 2)


def zdt1_data(n, seed):
    X = lhs_init(ZDT1, n, seed)
    return X, evaluate_batch(ZDT1, X)


class TestMoments:
    def test_one_hot(self):
        assert moments(BinnedPrediction(np.array([0.0, 1, 2]), np.array([1.0, 0]))) == (0.5, 0.0)

    def test_even_split(self):
        mean, sd = moments(BinnedPrediction(np.array([0.0, 1, 2]), np.array([0.5, 0.5])))
        assert mean == pytest.approx(1.0, abs=1e-12) and sd == pytest.approx(0.5, abs=1e-12)

    def test_uneven_split(self):
        mean, sd = moments(BinnedPrediction(np.array([0.0, 1, 2]), np.array([0.25, 0.75])))
        assert mean == pytest.approx(1.25, abs=1e-12)
        assert sd == pytest.approx(math.sqrt(0.1875), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 10**6))
    def test_bounds(self, K, seed):
        rng = np.random.default_rng(seed)
        edges = np.cumsum(rng.random(K + 1) + 1e-3) - 3
        p = rng.random(K)
        p /= p.sum()
        mean, sd = moments(BinnedPrediction(edges, p))
        assert edges[0] <= mean <= edges[-1]
        assert 0 <= sd <= (edges[-1] - edges[0]) / 2

    def test_rejects_unsorted_edges(self):
        with pytest.raises(ValueError):
            BinnedPrediction(np.array([0.0, 2, 1]), np.array([0.5, 0.5]))


class TestFit:
    def test_bin_edges_pad(self):
        np.testing.assert_allclose(bin_edges(np.array([0.0, 10.0]), 4)[[0, -1]], [-1.0, 11.0])
        np.testing.assert_allclose(bin_edges(np.array([3.0, 3.0]), 4)[[0, -1]], [2.0, 4.0])

    @pytest.mark.parametrize("backend", ["ensemble", "gp"])
    def test_fit_80_points(self, backend):
        X, Y = zdt1_data(80, 0)
        model = fit(X, Y, SurrogateConfig(backend=backend))
        preds = predict(model, X[0])
        assert len(preds) == 2 and all(len(p.probs) == 32 for p in preds)
        for p in preds:
            assert abs(p.probs.sum() - 1) <= 1e-9 and np.all(p.probs >= 0)

    def test_too_few_points(self):
        with pytest.raises(InsufficientDataError):
            fit(np.zeros((1, 3)), np.zeros((1, 2)))

    @pytest.mark.parametrize("backend", ["ensemble", "gp"])
    def test_constant_objective(self, backend, rng):
        X = rng.random((10, 3))
        Y = np.column_stack([np.full(10, 2.0), X[:, 0]])
        pop = predict_batch(fit(X, Y, SurrogateConfig(backend=backend)), rng.random((5, 3)))
        assert np.all(pop.sigma >= 0) and np.all(np.isfinite(pop.y))
        np.testing.assert_allclose(pop.y[:, 0], 2.0, atol=0.1)

    @pytest.mark.parametrize("backend", ["ensemble", "gp"])
    def test_refit_changes_prediction(self, backend):
        X, Y = zdt1_data(20, 1)
        probe = np.full((1, 10), 0.05)
        before = predict_batch(fit(X, Y, SurrogateConfig(backend=backend, seed=3)), probe)
        Xa = np.vstack([X, probe])
        Ya = np.vstack([Y, evaluate_batch(ZDT1, probe)])
        after = predict_batch(fit(Xa, Ya, SurrogateConfig(backend=backend, seed=3)), probe)
        assert not np.allclose(before.y, after.y)


class TestEnsemble:
    def test_deterministic_under_seed(self):
        X, Y = zdt1_data(30, 2)
        Q = np.random.default_rng(0).random((7, 10))
        a = predict_batch(fit(X, Y, SurrogateConfig(seed=11)), Q)
        b = predict_batch(fit(X, Y, SurrogateConfig(seed=11)), Q)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.sigma, b.sigma)

    def test_identical_members_give_one_hot(self):
        X, Y = zdt1_data(30, 2)
        model = fit(X, Y, SurrogateConfig(seed=0))
        model.alpha = 0.0
        member = model.models[0]
        member.omega[:] = member.omega[0]
        member.phase[:] = member.phase[0]
        member.coef[:] = member.coef[0]
        p = predict(model, X[3])[0].probs
        assert np.count_nonzero(p) == 1 and p.max() == 1.0

    def test_laplace_smoothing_keeps_every_bin_alive(self):
        X, Y = zdt1_data(30, 2)
        p = predict(fit(X, Y), X[0])[0].probs
        assert np.all(p > 0)
        assert p.min() == pytest.approx((0.5 / 32) / (16 + 0.5), rel=1e-12)


class TestGP:
    def test_probs_are_cdf_differences(self):
        X, Y = zdt1_data(25, 4)
        model = fit(X, Y, SurrogateConfig(backend="gp"))
        x = np.random.default_rng(1).random((1, 10))
        mu, sd = model.gaussian(x)
        edges = model.edges[1]
        cdf = norm.cdf(edges, mu[0, 1], sd[0, 1])
        expect = np.diff(cdf)
        expect[0] += cdf[0]
        expect[-1] += 1 - cdf[-1]
        np.testing.assert_allclose(predict(model, x[0])[1].probs, expect, atol=1e-12)

    def test_interpolates_training_targets(self):
        X, Y = zdt1_data(40, 5)
        model = fit(X, Y, SurrogateConfig(backend="gp"))
        mu, _ = model.gaussian(X)
        assert np.max(np.abs(mu - Y)) <= 1e-3

    def test_variance_at_training_input(self):
        X, Y = zdt1_data(40, 5)
        model = fit(X, Y, SurrogateConfig(backend="gp"))
        Xs = model.scaler(X)
        for gp in model.models:
            _, var = gp.posterior_standardized(Xs)
            assert np.all(var <= 1e-6 + 1e-6)

    def test_std_positive_away_from_data(self):
        X, Y = zdt1_data(20, 6)
        pop = predict_batch(fit(X, Y, SurrogateConfig(backend="gp")), np.random.default_rng(9).random((5, 10)))
        assert np.all(pop.sigma > 0)


@pytest.mark.parametrize("backend", ["ensemble", "gp"])
def test_batch_equals_loop(backend):
    X, Y = zdt1_data(30, 7)
    model = fit(X, Y, SurrogateConfig(backend=backend, seed=2))
    Q = np.random.default_rng(3).random((6, 10))
    pop = predict_batch(model, Q)
    for i, q in enumerate(Q):
        for j, pred in enumerate(predict(model, q)):
            mean, sd = moments(pred)
            assert pop.y[i, j] == pytest.approx(mean, abs=1e-12)
            assert pop.sigma[i, j] == pytest.approx(sd, abs=1e-12)
    assert np.all(pop.sigma >= 0)


@pytest.mark.parametrize("backend", ["ensemble", "gp"])
def test_calibration_on_held_out_points(backend):
    X, Y = zdt1_data(80, 10)
    Xt = np.random.default_rng(11).random((200, 10))
    Yt = evaluate_batch(ZDT1, Xt)
    pop = predict_batch(fit(X, Y, SurrogateConfig(backend=backend, seed=12)), Xt)
    coverage = np.mean(np.abs(Yt - pop.y) <= 2 * pop.sigma)
    assert coverage >= 0.75
