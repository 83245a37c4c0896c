"""Stopping-time estimation of the number of unpredicted queries.

In a uniformly random stream of S queries with B "bad" ones, let L be the
position of the T-th bad arrival. Then S (T - 1) / (L - 1) is an unbiased
estimate of B. The number of good queries before that point, L - T, follows
a negative hypergeometric law, which the helpers below evaluate exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.special import gammaln


def warmup_length(S: int) -> int:
    """Warm-up count T = ceil(ln(S)^2), clamped to at least 2."""
    if S < 2:
        raise ValueError(f"stream length must be at least 2, got {S}")
    return max(2, math.ceil(math.log(S) ** 2))


def running_estimate(S: int, b: int, n: int) -> float:
    if not 1 <= b <= n <= S:
        raise ValueError(f"need 1 <= b <= n <= S, got b={b}, n={n}, S={S}")
    if b == 1:
        return float(S - n + 1)
    return S * (b - 1) / (n - 1)


def stopping_estimate(S: int, T: int, L: int) -> float:
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")
    if L < T:
        raise ValueError(f"position of the T-th bad query cannot be below T (L={L}, T={T})")
    return S * (T - 1) / (L - 1)


def variance_bound(S: int, B: int, T: int) -> float:
    """Upper bound on the estimator variance, valid for T >= 3."""
    if T < 3:
        raise ValueError("variance bound requires T >= 3")
    return S * (T - 1) / ((S - 1) * (T - 2)) * B * (B - 1) - B * B


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def nhg_pmf(S: int, G: int, T: int, g: int) -> float:
    """P(g good queries precede the T-th bad one), for G good out of S."""
    B = S - G
    if G < 0 or B < T or T < 1:
        raise ValueError(f"need 0 <= G and S - G >= T >= 1, got S={S}, G={G}, T={T}")
    if g < 0 or g > G:
        return 0.0
    logp = _log_binom(g + T - 1, g) + _log_binom(S - T - g, G - g) - _log_binom(S, G)
    return float(np.exp(logp))


def nhg_pmf_exact(S: int, G: int, T: int, g: int) -> Fraction:
    if g < 0 or g > G:
        return Fraction(0)
    return Fraction(math.comb(g + T - 1, g) * math.comb(S - T - g, G - g), math.comb(S, G))


def falling(x, k: int):
    out = 1
    for i in range(k):
        out *= x - i
    return out


def inverse_factorial_moment(S: int, B: int, T: int, k: int) -> float:
    """E[(T-1)_k / (L-1)_k] by direct summation over the NHG pmf."""
    if not 1 <= k < T:
        raise ValueError(f"need 1 <= k < T, got k={k}, T={T}")
    if not T <= B <= S:
        raise ValueError(f"need T <= B <= S, got T={T}, B={B}, S={S}")
    G = S - B
    g = np.arange(G + 1)
    logp = (_log_binom(g + T - 1, g) + _log_binom(S - T - g, G - g)
            - _log_binom(S, G))
    ratio = np.ones(G + 1)
    for i in range(k):
        ratio *= (T - 1 - i) / (g + T - 1 - i)
    return float(np.sum(ratio * np.exp(logp)))


def expected_stopping_position(S: int, B: int, T: int) -> float:
    """E[L] = T + G T / (B + 1)."""
    return T + (S - B) * T / (B + 1)


def enumerate_estimates(S: int, B: int, T: int):
    """Exact (estimate, count) pairs over all C(S, B) bad-position sets.

    Only the T-th smallest position matters, so counts are closed-form
    rather than a literal walk over subsets.
    """
    out = []
    for L in range(T, S - (B - T) + 1):
        count = math.comb(L - 1, T - 1) * math.comb(S - L, B - T)
        if count:
            out.append((Fraction(S * (T - 1), L - 1), count))
    return out


def enumerate_estimates_bruteforce(S: int, B: int, T: int):
    """Same as `enumerate_estimates` but literally iterates every subset."""
    counts: dict[Fraction, int] = {}
    for positions in combinations(range(1, S + 1), B):
        L = positions[T - 1]
        est = Fraction(S * (T - 1), L - 1)
        counts[est] = counts.get(est, 0) + 1
    return sorted(counts.items())


def exact_moments(S: int, B: int, T: int) -> tuple[Fraction, Fraction]:
    """Exact mean and variance of the stopping estimate under random order."""
    pairs = enumerate_estimates_bruteforce(S, B, T) if math.comb(S, B) <= 50_000 \
        else enumerate_estimates(S, B, T)
    total = sum(c for _, c in pairs)
    mean = sum(e * c for e, c in pairs) / total
    var = sum((e - mean) ** 2 * c for e, c in pairs) / total
    return mean, var


def sample_stopping_estimates(S: int, B: int, T: int, trials: int,
                              rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo draws of the stopping estimate over random permutations."""
    if not 2 <= T <= B <= S:
        raise ValueError(f"need 2 <= T <= B <= S, got T={T}, B={B}, S={S}")
    chunk = max(1, 2_000_000 // S)
    out = []
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        # The B smallest of S iid keys mark a uniformly random bad subset.
        keys = rng.random((m, S))
        bad = np.argpartition(keys, B - 1, axis=1)[:, :B] if B < S \
            else np.tile(np.arange(S), (m, 1))
        bad.sort(axis=1)
        L = bad[:, T - 1] + 1
        out.append(S * (T - 1) / (L - 1))
        done += m
    return np.concatenate(out)


@dataclass
class EstimatorState:
    """Online estimate of the bad-query count, locked at the T-th bad arrival."""

    S: int
    T: int
    b: int = 0
    n: int = 0
    B_hat: float = 0.0
    fixed: bool = False
    L: Optional[int] = None

    @classmethod
    def for_stream(cls, S: int) -> "EstimatorState":
        return cls(S=S, T=warmup_length(S))

    def observe(self, bad: bool) -> None:
        self.n += 1
        if not bad:
            return
        self.b += 1
        if self.fixed:
            return
        self.B_hat = running_estimate(self.S, self.b, self.n)
        if self.b == self.T:
            self.L = self.n
            self.B_hat = stopping_estimate(self.S, self.T, self.L)
            self.fixed = True
