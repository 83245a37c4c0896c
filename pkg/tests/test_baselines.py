import numpy as np
import pytest

import oracles
from lapras.baselines import offline_mm, online_independent
from lapras.dp import PrivacyParams, agm_sigma
from lapras.matrix_mechanism import StrategyConfig, l2_sensitivity, pseudoinverse, select_strategy
from lapras.workload import random_binary_universe

X = np.array([5.0, 3, 8, 1, 0, 2, 7, 4])


class TestOnlineIndependent:
    def test_single_query(self):
        res = online_independent(np.ones((1, 8)), X, 1.0, 1e-3, np.random.default_rng(0))
        assert res.total_eps == 1.0 and res.total_delta == pytest.approx(5e-4)
        assert res.per_query_sigma[0] == agm_sigma(1, PrivacyParams(1.0, 5e-4))

    def test_uniform_sigma_and_budget(self):
        W = oracles.all_ranges(8)
        res = online_independent(W, X, 1.0, 1e-3, np.random.default_rng(0))
        S = len(W)
        assert np.all(res.per_query_sigma == res.per_query_sigma[0])
        assert res.total_eps == pytest.approx(1.0, rel=1e-12)
        assert res.total_delta == pytest.approx(S * 1e-3 / (S + 1), rel=1e-12)

    def test_variance_monte_carlo(self):
        W = oracles.all_ranges(4)
        rng = np.random.default_rng(1)
        errs = np.array([online_independent(W, X[:4], 1.0, 1e-3, rng).answers - W @ X[:4]
                         for _ in range(5000)])
        sigma = agm_sigma(1, PrivacyParams(1.0 / len(W), 1e-3 / (len(W) + 1)))
        np.testing.assert_allclose(errs.var(axis=0), sigma ** 2, rtol=0.08)
        assert errs.var() == pytest.approx(sigma ** 2, rel=0.05)

    def test_mae_scales_with_inverse_eps(self):
        W = random_binary_universe(8, 100, 0).queries
        rng = np.random.default_rng(2)
        mae = {eps: np.mean([np.mean(np.abs(online_independent(W, X, eps, 1e-3, rng).answers
                                            - W @ X)) for _ in range(50)])
               for eps in (1.0, 0.5)}
        assert mae[0.5] / mae[1.0] == pytest.approx(2.0, rel=0.1)


class TestOfflineMM:
    def test_repeated_query(self):
        q = np.ones(8)
        res = offline_mm(np.array([q, q, q]), X, 1.0, 1e-3, np.random.default_rng(0))
        assert res.answers[0] == res.answers[1] == res.answers[2]
        assert res.total_eps == 1.0 and res.total_delta == pytest.approx(1e-3 / 4)

    def test_beats_independent_on_ranges(self):
        W = oracles.all_ranges(8)
        S = len(W)
        A = select_strategy(W, StrategyConfig())
        sigma_mm = agm_sigma(l2_sensitivity(A.matrix), PrivacyParams(1.0, 1e-3 / (S + 1)))
        mm_total = sigma_mm ** 2 * np.sum((W @ pseudoinverse(A.matrix)) ** 2)
        sigma_ind = agm_sigma(1, PrivacyParams(1.0 / S, 1e-3 / (S + 1)))
        assert mm_total < S * sigma_ind ** 2
        res = offline_mm(W, X, 1.0, 1e-3, np.random.default_rng(0))
        assert res.per_query_variance.sum() == pytest.approx(mm_total, rel=1e-9)
