"""Online answering of a query stream with a predicted workload.

Predicted ("good") queries are served from a single matrix-mechanism release
made before the stream starts. Unpredicted ("bad") queries get fresh Gaussian
noise whose epsilon comes from the allocator, paced by the stopping-time
estimate of how many bad queries remain. Optionally a cache of released
answers serves bad queries that are linear combinations of earlier releases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from lapras.allocation import (HALT, Allocator, BudgetPlan, ConfigError, Reallocate,
                               no_reallocate)
from lapras.dp import PrivacyLedger, PrivacyParams, agm_sigma, sample_gaussian
from lapras.estimator import EstimatorState, warmup_length
from lapras.matrix_mechanism import (PrecomputedAnswers, StrategyConfig, StrategyMatrix,
                                     pseudoinverse, run_matrix_mechanism)
from lapras.workload import PredictionSet

# Every online query is a counting query: one record moves its answer by <= 1.
ONLINE_SENSITIVITY = 1.0


class InvariantViolation(AssertionError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    strategy: StrategyConfig = StrategyConfig()
    cache: bool = False
    residual_tol: float = 1e-6
    noise: bool = True  # test hook: False forces every sigma to zero
    reallocate: Reallocate = no_reallocate
    mm_strategy: Optional[StrategyMatrix] = None


@dataclass
class QueryRecord:
    position: int
    classification: str  # "good" or "bad"
    source: str  # "mm", "cache", "pool", "warmup", "paced", "reserve", "refused"
    eps_spent: float
    delta_spent: float
    sigma: float
    answer: Optional[float]
    true_answer: float
    variance: float
    B_hat: float
    phase: str


@dataclass
class StreamTrace:
    records: list[QueryRecord] = field(default_factory=list)
    halted: bool = False
    wasted_eps: float = 0.0
    spent_eps: float = 0.0
    spent_delta: float = 0.0
    eps_mm_charge: float = 0.0
    n_releases: int = 0
    cache_hits: int = 0

    @property
    def online_eps(self) -> float:
        return math.fsum(r.eps_spent for r in self.records)

    @property
    def refused(self) -> np.ndarray:
        return np.array([r.answer is None for r in self.records], dtype=bool)

    @property
    def truths(self) -> np.ndarray:
        return np.array([r.true_answer for r in self.records])

    @property
    def variances(self) -> np.ndarray:
        return np.array([r.variance for r in self.records])


class AnswerCache:
    """Released answers that later queries may reuse by post-processing.

    Each entry keeps its answer's noise as a linear functional: MM entries as
    a row of the reconstruction operator (correlated noise), fresh releases as
    an independent variance. That lets a cache hit report its exact variance.
    """

    def __init__(self, n: int, residual_tol: float = 1e-6):
        self.n = n
        self.residual_tol = residual_tol
        self._queries: list[np.ndarray] = []
        self._answers: list[float] = []
        self._mm_rows: list[Optional[np.ndarray]] = []
        self._ind_var: list[float] = []
        self._mm_sigma = 0.0
        self._basis: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self._queries)

    @property
    def basis(self) -> list[tuple[np.ndarray, float]]:
        return list(zip(self._queries, self._answers))

    def add(self, q, answer: float, variance: float = 0.0) -> None:
        self._queries.append(np.asarray(q, dtype=float))
        self._answers.append(float(answer))
        self._mm_rows.append(None)
        self._ind_var.append(float(variance))
        self._basis = None

    def add_release(self, pre: PrecomputedAnswers) -> None:
        if len(pre) == 0:
            return
        recon_op = pre.workload @ pseudoinverse(pre.strategy.matrix)
        self._mm_sigma = pre.sigma_used
        for i, q in enumerate(pre.workload):
            self._queries.append(np.asarray(q, dtype=float))
            self._answers.append(float(pre.reconstruction[i]))
            self._mm_rows.append(recon_op[i])
            self._ind_var.append(0.0)
        self._basis = None

    def decompose(self, q) -> Optional[np.ndarray]:
        if not self._queries:
            return None
        if self._basis is None:
            self._basis = np.array(self._queries)
        q = np.asarray(q, dtype=float)
        c, *_ = np.linalg.lstsq(self._basis.T, q, rcond=None)
        resid = self._basis.T @ c - q
        if np.max(np.abs(resid)) <= self.residual_tol:
            return c
        return None

    def combine(self, c) -> tuple[float, float]:
        """Answer and its variance for the combination c of cached entries."""
        c = np.asarray(c, dtype=float)
        answer = float(c @ np.array(self._answers))
        mm = None
        var = 0.0
        for ci, row, v in zip(c, self._mm_rows, self._ind_var):
            if row is not None:
                mm = ci * row if mm is None else mm + ci * row
            else:
                var += ci * ci * v
        if mm is not None:
            var += self._mm_sigma ** 2 * float(mm @ mm)
        return answer, var


def cache_decompose(cache: AnswerCache, q) -> Optional[np.ndarray]:
    return cache.decompose(q)


def classify(q, P: PredictionSet) -> str:
    return "good" if q in P else "bad"


def _validate_stream(stream, n: int) -> np.ndarray:
    Q = np.asarray(stream if not hasattr(stream, "queries") else stream.queries,
                   dtype=float)
    if Q.ndim != 2 or Q.shape[0] < 1:
        raise ConfigError(f"stream must be a nonempty list of queries, got shape {Q.shape}")
    if Q.shape[1] != n:
        raise ConfigError(f"query width {Q.shape[1]} does not match data size {n}")
    if not np.all(np.isfinite(Q)):
        raise ConfigError("stream has non-finite coefficients")
    if np.max(np.abs(Q)) > ONLINE_SENSITIVITY:
        raise ConfigError("online queries must have coefficients in [-1, 1] "
                          "(counting-query sensitivity 1)")
    return Q


def process_stream(stream, x, P: PredictionSet, plan: BudgetPlan,
                   config: EngineConfig = EngineConfig(),
                   rng: Optional[np.random.Generator] = None):
    """Answer every query of the stream in order.

    Returns ``(answers, trace)``. ``answers[i]`` is NaN exactly when the i-th
    query was refused after the reserve ran dry; ``trace.refused`` marks the
    same positions.
    """
    if rng is None:
        rng = np.random.default_rng()
    x = np.asarray(x, dtype=float)
    Q = _validate_stream(stream, x.size)
    S = Q.shape[0]
    if plan.delta is None:
        raise ConfigError("budget plan has no global delta; use split_budget(..., delta=)")
    if plan.delta_i is None:
        plan = plan.for_stream(plan.delta, S)
    if not math.isclose(plan.delta_i * (S + 1), plan.delta, rel_tol=1e-12):
        raise ConfigError("plan's per-release delta was fixed for a different stream length")
    parts = math.fsum([plan.eps_mm, plan.eps_bad_init, plan.eps_bad, plan.eps_reserve])
    if not math.isclose(parts, plan.eps, rel_tol=1e-12):
        raise ConfigError(f"budget components sum to {parts}, not {plan.eps}")

    ledger = PrivacyLedger(PrivacyParams(plan.eps, plan.delta))
    delta_i = plan.delta_i
    truths = Q @ x

    pre = run_matrix_mechanism(P.queries if len(P) else [], x, plan.eps_mm, delta_i,
                               ledger, rng, strategy=config.mm_strategy,
                               config=config.strategy, noise=config.noise)
    cache = None
    if config.cache:
        cache = AnswerCache(x.size, config.residual_tol)
        cache.add_release(pre)

    T = warmup_length(max(S, 2))
    est = EstimatorState(S=S, T=T)
    alloc = Allocator(plan, T, config.reallocate)
    trace = StreamTrace(eps_mm_charge=plan.eps_mm if len(pre) else 0.0,
                        n_releases=1 if len(pre) else 0)
    answers = np.empty(S)

    for pos, q in enumerate(Q, start=1):
        t = float(truths[pos - 1])
        if q in P:
            est.observe(bad=False)
            a = pre.answer(q)
            rec = QueryRecord(pos, "good", "mm", 0.0, 0.0, pre.sigma_used, a, t,
                              pre.variance(q), est.B_hat, alloc.state.phase)
            trace.records.append(rec)
            answers[pos - 1] = a
            continue

        if cache is not None:
            c = cache.decompose(q)
            if c is not None:
                # Served by post-processing; does not count against pacing.
                est.observe(bad=False)
                a, var = cache.combine(c)
                trace.cache_hits += 1
                trace.records.append(QueryRecord(pos, "bad", "cache", 0.0, 0.0, 0.0, a, t,
                                                 var, est.B_hat, alloc.state.phase))
                answers[pos - 1] = a
                continue

        est.observe(bad=True)
        phase_before = alloc.state.phase
        eps_b = alloc.next_epsilon(est.b, est.B_hat, est.fixed)
        if eps_b is HALT:
            trace.records.append(QueryRecord(pos, "bad", "refused", 0.0, 0.0, 0.0, None, t,
                                             math.nan, est.B_hat, "halted"))
            answers[pos - 1] = math.nan
            continue
        if not eps_b > 0:
            raise InvariantViolation(f"allocator emitted nonpositive epsilon {eps_b}")
        sigma = agm_sigma(ONLINE_SENSITIVITY, PrivacyParams(eps_b, delta_i))
        ledger.charge(f"query {pos}", eps_b, delta_i)
        trace.n_releases += 1
        noise = sample_gaussian(sigma if config.noise else 0.0, rng)
        a = t + noise
        var = sigma ** 2 if config.noise else 0.0
        source = _source_of(plan.smooth, phase_before, alloc.state.phase)
        trace.records.append(QueryRecord(pos, "bad", source, eps_b, delta_i, sigma, a, t, var,
                                         est.B_hat, alloc.state.phase))
        answers[pos - 1] = a
        if cache is not None:
            cache.add(q, a, var)

    trace.halted = alloc.halted
    trace.spent_eps = ledger.spent_eps
    trace.spent_delta = ledger.spent_delta
    trace.wasted_eps = max(plan.eps - trace.spent_eps, 0.0)
    if trace.spent_eps > plan.eps * (1 + 1e-12) or trace.spent_delta > plan.delta * (1 + 1e-12):
        raise InvariantViolation("ledger exceeded its cap")
    return answers, trace


def _source_of(smooth: bool, before: str, after: str) -> str:
    if after == "reserve":
        return "reserve"
    if smooth:
        return "pool"
    return "warmup" if before == "warmup" else "paced"


def process_stream_with_cache(stream, x, P: PredictionSet, plan: BudgetPlan,
                              config: EngineConfig = EngineConfig(),
                              rng: Optional[np.random.Generator] = None):
    return process_stream(stream, x, P, plan, replace(config, cache=True), rng)
