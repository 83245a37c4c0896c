import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lapras.allocation import ConfigError, split_budget
from lapras.baselines import offline_mm
from lapras.dp import PrivacyParams, agm_sigma
from lapras.engine import (AnswerCache, EngineConfig, cache_decompose, classify,
                           process_stream, process_stream_with_cache)
from lapras.estimator import warmup_length
from lapras.matrix_mechanism import StrategyConfig
from lapras.workload import (PredictionSet, StreamSpec, build_stream, oracle_predict,
                             random_binary_universe, range_universe)

N = 8
FAST = StrategyConfig(max_iter=100)


@pytest.fixture(scope="module")
def setting():
    U = range_universe(N)
    P = oracle_predict(U, 20, 0)
    R = random_binary_universe(N, 200, 1)
    x = np.random.default_rng(0).integers(0, 200, size=N).astype(float)
    return P, R, x


def _plan(strat="matrix_heavy", smooth=False, S=40, eps=1.0, delta=1e-3, **kw):
    return split_budget(eps, strat, smooth, delta=delta, stream_length=S, **kw)


class TestClassify:
    def test_membership_is_exact(self, setting):
        P, _, _ = setting
        q = P.queries[0]
        assert classify(q, P) == "good"
        assert classify(2 * q, P) == "bad"
        assert classify(q, PredictionSet(np.zeros((0, N)))) == "bad"


class TestProcessStream:
    def test_all_good_spends_nothing_online(self, setting):
        P, R, x = setting
        s = build_stream(P, R, StreamSpec(20, 1.0, seed=0))
        ans, tr = process_stream(s, x, P, _plan(S=20), EngineConfig(strategy=FAST),
                                 np.random.default_rng(0))
        assert tr.online_eps == 0 and all(r.source == "mm" for r in tr.records)
        assert tr.spent_eps == pytest.approx(0.5)
        assert tr.spent_delta == pytest.approx(1e-3 / 21)

    def test_static_warmup_spends_init_exactly(self, setting):
        P, R, x = setting
        S = 40
        T = warmup_length(S)
        s = build_stream(P, R, StreamSpec(S, 0.0, seed=1))
        plan = _plan("equal", S=S)
        _, tr = process_stream(s, x, P, plan, EngineConfig(strategy=FAST),
                               np.random.default_rng(1))
        warm = [r.eps_spent for r in tr.records if r.source == "warmup"]
        assert len(warm) == T
        assert math.fsum(warm) == pytest.approx(plan.eps_bad_init, rel=1e-12)

    def test_noiseless_answers_exact(self, setting):
        P, R, x = setting
        for cache in (False, True):
            s = build_stream(P, R, StreamSpec(40, 0.5, seed=2))
            ans, tr = process_stream(s, x, P, _plan(smooth=True),
                                     EngineConfig(strategy=FAST, cache=cache, noise=False),
                                     np.random.default_rng(2))
            ok = ~np.isnan(ans)
            np.testing.assert_allclose(ans[ok], tr.truths[ok], atol=1e-8)

    def test_good_repeats_identical(self, setting):
        P, R, x = setting
        q = P.queries[3]
        stream = np.array([q, R.queries[0], q, q])
        ans, _ = process_stream(stream, x, P, _plan(S=4), EngineConfig(strategy=FAST),
                                np.random.default_rng(3))
        assert ans[0] == ans[2] == ans[3]

    def test_sigma_matches_calibration(self, setting):
        P, R, x = setting
        s = build_stream(P, R, StreamSpec(40, 0.0, seed=4))
        plan = _plan(S=40)
        _, tr = process_stream(s, x, P, plan, EngineConfig(strategy=FAST),
                               np.random.default_rng(4))
        for r in tr.records:
            if r.eps_spent > 0:
                assert r.sigma == agm_sigma(1.0, PrivacyParams(r.eps_spent, plan.delta_i))
                assert r.delta_spent == plan.delta_i

    def test_delta_identity(self, setting):
        P, R, x = setting
        s = build_stream(P, R, StreamSpec(60, 0.3, seed=5))
        plan = _plan(S=60, smooth=True)
        _, tr = process_stream(s, x, P, plan, EngineConfig(strategy=FAST),
                               np.random.default_rng(5))
        assert tr.spent_delta == pytest.approx(tr.n_releases * plan.delta / 61, rel=1e-12)
        assert tr.spent_delta <= plan.delta

    def test_halt_then_refuse(self, setting):
        P, R, x = setting
        # Good queries first make the locked estimate undershoot the true bad
        # count, so pacing overflows into the reserve and then halts.
        s = np.concatenate([P.queries[:20], R.queries[:40]])
        plan = _plan("matrix_heavy", S=60, eps_min=0.05)
        ans, tr = process_stream(s, x, P, plan, EngineConfig(strategy=FAST),
                                 np.random.default_rng(6))
        assert tr.halted
        first = next(i for i, r in enumerate(tr.records) if r.source == "refused")
        assert all(r.eps_spent == 0 for r in tr.records[first:])
        assert np.isnan(ans[tr.refused]).all() and tr.refused.sum() > 0
        assert len(tr.records) == 60

    def test_malformed_stream(self, setting):
        P, _, x = setting
        with pytest.raises(ConfigError):
            process_stream(np.ones((3, N + 1)), x, P, _plan(S=3))
        with pytest.raises(ConfigError):
            process_stream(2 * np.ones((3, N)), x, P, _plan(S=3))
        with pytest.raises(ConfigError):
            process_stream(np.ones((3, N)), x, P, split_budget(1.0, "equal"))

    def test_wrong_stream_length_plan(self, setting):
        P, R, x = setting
        with pytest.raises(ConfigError):
            process_stream(R.queries[:5], x, P, _plan(S=10))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 80), st.floats(0, 1), st.sampled_from(["equal", "matrix_heavy",
                                                                 "query_heavy", "reserve_heavy"]),
           st.booleans(), st.booleans(), st.sampled_from(["uniform_random", "bad_first"]),
           st.integers(0, 2 ** 31))
    def test_ledger_within_cap(self, setting, S, rho, strat, smooth, cache, order, seed):
        P, R, x = setting
        rho = min(rho, len(P) / S)
        s = build_stream(P, R, StreamSpec(S, rho, order, seed))
        plan = _plan(strat, smooth, S=S)
        _, tr = process_stream(s, x, P, plan, EngineConfig(strategy=FAST, cache=cache),
                               np.random.default_rng(seed))
        assert tr.spent_eps <= 1.0 * (1 + 1e-12)
        assert tr.spent_delta <= 1e-3 * (1 + 1e-12)
        assert math.fsum([tr.online_eps, tr.eps_mm_charge]) == pytest.approx(tr.spent_eps)
        assert all(r.eps_spent == 0 for r in tr.records if r.classification == "good")


class TestCache:
    def test_unit_hit(self):
        c = AnswerCache(3)
        c.add([1, 0, 0], 5.0, 1.0)
        c.add([0, 1, 0], 7.0, 1.0)
        coef = cache_decompose(c, [1, 0, 0])
        np.testing.assert_allclose(coef, [1, 0], atol=1e-12)
        assert c.combine(coef) == pytest.approx((5.0, 1.0))

    def test_sum_hit(self):
        c = AnswerCache(3)
        c.add([1, 0, 0], 5.0, 1.0)
        c.add([0, 1, 0], 7.0, 2.0)
        ans, var = c.combine(cache_decompose(c, [1, 1, 0]))
        assert ans == pytest.approx(12.0) and var == pytest.approx(3.0)

    def test_miss_outside_span(self):
        c = AnswerCache(3)
        c.add([1, 1, 0], 1.0)
        c.add([0, 1, 0], 1.0)
        # e3 is orthogonal to both cached rows, so [0, 0, 1] has no representation.
        assert cache_decompose(c, [0, 0, 1]) is None
        assert cache_decompose(AnswerCache(3), [1, 0, 0]) is None

    def test_span_free_stream_same_trajectory(self, setting):
        _, R, x = setting
        P = PredictionSet(np.zeros((0, N)))
        rows = np.eye(N)[:6]  # orthogonal rows never lie in each other's span
        plan = _plan("equal", smooth=True, S=6)
        _, a = process_stream(rows, x, P, plan, EngineConfig(strategy=FAST),
                              np.random.default_rng(7))
        _, b = process_stream_with_cache(rows, x, P, plan, EngineConfig(strategy=FAST),
                                         np.random.default_rng(7))
        assert [r.eps_spent for r in a.records] == [r.eps_spent for r in b.records]
        assert b.cache_hits == 0

    def test_cache_spends_no_more(self, setting):
        P, R, x = setting
        for seed in range(5):
            s = build_stream(P, R, StreamSpec(40, 0.5, seed=seed))
            plan = _plan(smooth=True)
            _, a = process_stream(s, x, P, plan, EngineConfig(strategy=FAST),
                                  np.random.default_rng(seed))
            _, b = process_stream_with_cache(s, x, P, plan, EngineConfig(strategy=FAST),
                                             np.random.default_rng(seed))
            assert b.online_eps <= a.online_eps + 1e-12

    def test_hit_variance_matches_monte_carlo(self, setting):
        P, R, x = setting
        pair = None
        for i in range(len(P)):
            for j in range(i + 1, len(P)):
                s = P.queries[i] + P.queries[j]
                if s.max() <= 1 and s not in P:
                    pair = s
                    break
            if pair is not None:
                break
        stream = np.array([P.queries[0], pair])
        plan = _plan(S=2)
        answers, variances = [], []
        rng = np.random.default_rng(8)
        for _ in range(3000):
            ans, tr = process_stream_with_cache(stream, x, P, plan, EngineConfig(strategy=FAST),
                                                rng)
            assert tr.records[1].source == "cache"
            answers.append(ans[1])
            variances.append(tr.records[1].variance)
        assert np.var(answers) == pytest.approx(variances[0], rel=0.1)


class TestUtilityShape:
    def test_full_overlap_within_penalty(self, setting):
        P, R, x = setting
        plan = _plan("matrix_heavy", S=20)
        c = (plan.eps / plan.eps_mm) ** 2 * 1.1
        rng = np.random.default_rng(9)
        lap, off = 0.0, 0.0
        for t in range(200):
            s = build_stream(P, R, StreamSpec(20, 1.0, seed=t))
            ans, tr = process_stream(s, x, P, plan, EngineConfig(strategy=FAST), rng)
            lap += np.sum((ans - tr.truths) ** 2)
            res = offline_mm(s.queries, x, plan.eps, plan.delta, rng, config=FAST)
            off += np.sum((res.answers - res.truths) ** 2)
        assert lap <= c * off
