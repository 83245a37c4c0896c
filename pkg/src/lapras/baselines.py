"""Reference mechanisms: per-query independent noise and clairvoyant offline MM."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from lapras.dp import PrivacyLedger, PrivacyParams, agm_sigma, sample_gaussian
from lapras.engine import ONLINE_SENSITIVITY, _validate_stream
from lapras.matrix_mechanism import StrategyConfig, run_matrix_mechanism


@dataclass
class BaselineResult:
    answers: np.ndarray
    truths: np.ndarray
    total_eps: float
    total_delta: float
    per_query_sigma: np.ndarray
    per_query_variance: np.ndarray


def online_independent(stream, x, eps: float, delta: float,
                       rng: np.random.Generator, *, noise: bool = True) -> BaselineResult:
    """Each of the S queries gets its own release at (eps / S, delta / (S + 1))."""
    x = np.asarray(x, dtype=float)
    Q = _validate_stream(stream, x.size)
    S = Q.shape[0]
    ledger = PrivacyLedger(PrivacyParams(eps, delta))
    eps_q = eps / S
    delta_q = delta / (S + 1)
    sigma = agm_sigma(ONLINE_SENSITIVITY, PrivacyParams(eps_q, delta_q))
    truths = Q @ x
    answers = np.empty(S)
    for i in range(S):
        ledger.charge(f"query {i + 1}", eps_q, delta_q)
        answers[i] = truths[i] + sample_gaussian(sigma if noise else 0.0, rng)
    sig = np.full(S, sigma)
    return BaselineResult(answers, truths, ledger.spent_eps, ledger.spent_delta, sig,
                          sig ** 2 if noise else np.zeros(S))


def offline_mm(all_queries, x, eps: float, delta: float, rng: np.random.Generator, *,
               config: StrategyConfig = StrategyConfig(), noise: bool = True) -> BaselineResult:
    """One matrix-mechanism release over the realized stream's distinct queries.

    Sees the whole stream in advance, so it is a utility reference rather than
    an online mechanism. Repeated queries share one released answer.
    """
    x = np.asarray(x, dtype=float)
    Q = _validate_stream(all_queries, x.size)
    S = Q.shape[0]
    ledger = PrivacyLedger(PrivacyParams(eps, delta))
    pre = run_matrix_mechanism(Q, x, eps, delta / (S + 1), ledger, rng, config=config,
                               noise=noise, label="offline_mm")
    answers = np.array([pre.answer(q) for q in Q])
    var = np.array([pre.variance(q) for q in Q])
    return BaselineResult(answers, Q @ x, ledger.spent_eps, ledger.spent_delta,
                          np.full(S, pre.sigma_used), var)
