"""Invariant suites: ledger fuzzing, pool soundness and estimator unbiasedness.

Each suite returns a `SuiteResult`; the CLI's ``verify`` command and the
acceptance tests both call these.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from lapras.allocation import SPLITS, AllocatorState, smooth_next_epsilon, split_budget
from lapras.engine import EngineConfig, process_stream
from lapras.estimator import enumerate_estimates, enumerate_estimates_bruteforce
from lapras.matrix_mechanism import StrategyConfig
from lapras.workload import (ORDERS, PredictionSet, StreamSpec, build_stream,
                             random_binary_universe, range_universe)


@dataclass
class SuiteResult:
    name: str
    cases: int
    failures: list = field(default_factory=list)
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "ok" if self.ok else f"{len(self.failures)} FAILED"
        return f"{self.name}: {self.cases} cases, {status} ({self.seconds:.1f}s)"


def ledger_fuzz(n_configs: int = 1000, seed: int = 0, max_stream: int = 200,
                n: int = 16) -> SuiteResult:
    """Random configurations run end to end; every ledger must stay within (eps, delta).

    The engine itself raises if its ledger overshoots, so a failure is either
    that exception or a spent total above the cap on the returned trace.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    universe = range_universe(n)
    u_rand = random_binary_universe(n, 400, seed + 1)
    # A few prediction sets, so strategy selection is shared across configs.
    pred_sets = []
    for size in (5, 20, 60, len(universe)):
        idx = rng.choice(len(universe), size=size, replace=False)
        pred_sets.append(PredictionSet(universe.queries[idx]))
    strat_cfg = StrategyConfig(max_iter=100)
    splits = sorted(SPLITS)
    res = SuiteResult("ledger fuzz", n_configs)
    for i in range(n_configs):
        S = int(rng.integers(2, max_stream + 1))
        eps = float(10 ** rng.uniform(-2, 1))
        delta = float(10 ** rng.uniform(-9, -2))
        split = splits[i % len(splits)]
        smooth = bool((i // len(splits)) % 2)
        order = ORDERS[(i // (2 * len(splits))) % len(ORDERS)]
        cache = bool(rng.integers(2))
        P = pred_sets[int(rng.integers(len(pred_sets)))]
        rho = float(rng.choice([0.0, rng.uniform(), 1.0]))
        rho = min(rho, len(P) / S)  # a stream cannot draw more predicted queries than |P|
        x = rng.integers(0, 1000, size=n).astype(float)
        spec = StreamSpec(S, rho, order, int(rng.integers(2 ** 31)))
        stream = build_stream(P, u_rand, spec)
        plan = split_budget(eps, split, smooth, delta=delta, stream_length=S)
        cfg = EngineConfig(strategy=strat_cfg, cache=cache)
        case = dict(i=i, S=S, eps=eps, delta=delta, split=split, smooth=smooth,
                    order=order, cache=cache, rho=rho)
        try:
            _, trace = process_stream(stream, x, P, plan, cfg, np.random.default_rng(i))
        except Exception as exc:  # noqa: BLE001 - any crash is a finding
            res.failures.append({**case, "error": repr(exc)})
            continue
        if trace.spent_eps > eps * (1 + 1e-12) or trace.spent_delta > delta * (1 + 1e-12):
            res.failures.append({**case, "spent": (trace.spent_eps, trace.spent_delta)})
    res.seconds = time.perf_counter() - t0
    return res


def _adversarial_estimates(kind: str, B: int, rng: np.random.Generator) -> np.ndarray:
    b = np.arange(1, B + 1, dtype=float)
    if kind == "tiny":
        return np.ones(B)
    if kind == "exact":
        return np.full(B, float(B))
    if kind == "huge":
        return np.full(B, 1e12)
    if kind == "lagging":
        return b  # estimate always equals the current count
    if kind == "oscillating":
        return np.where(np.arange(B) % 2 == 0, 1.0, 10.0 * B)
    return rng.uniform(0, 3 * B, size=B)


ESTIMATE_KINDS = ("tiny", "exact", "huge", "lagging", "oscillating", "random")


def pool_soundness(trajectories: int = 10_000, seed: int = 0,
                   max_bad: int = 10_000) -> SuiteResult:
    """Smooth pacing never spends the whole pool, whatever the estimates say.

    Bad-query counts are log-uniform on [2, max_bad]; the largest count is
    always included.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    res = SuiteResult("pool soundness", trajectories)
    worst = 0.0
    for k in range(trajectories):
        B = max_bad if k == 0 else int(round(math.exp(rng.uniform(math.log(2),
                                                                  math.log(max_bad)))))
        kind = ESTIMATE_KINDS[k % len(ESTIMATE_KINDS)]
        B_hats = _adversarial_estimates(kind, B, rng).tolist()
        pool = float(10 ** rng.uniform(-3, 1))
        state = AllocatorState(phase="paced", eps_bad_init_rem=0.0, eps_bad_rem=pool,
                               eps_reserve_rem=0.0, eps_min=0.0, T=2, smooth=True)
        spent = []
        for b in range(1, B + 1):
            eps_b, state = smooth_next_epsilon(state, B_hats[b - 1], b)
            spent.append(eps_b)
        total = math.fsum(spent)
        worst = max(worst, total / pool)
        # fsum rounds correctly, so the sign of pool - sum(spent) is exact.
        margin = math.fsum([pool] + [-e for e in spent])
        if not (margin > 0 and min(spent) >= 0):
            res.failures.append({"k": k, "B": B, "kind": kind, "pool": pool, "spent": total})
    res.detail["max_fraction_spent"] = worst
    res.seconds = time.perf_counter() - t0
    return res


def unbiasedness_enumeration(max_S: int = 12, T_values=(2, 3, 4),
                             brute_force_limit: int = 2_000) -> SuiteResult:
    """Exact mean of the stopping estimate equals B on every small case.

    Cases with at most ``brute_force_limit`` subsets are also enumerated
    literally and compared with the closed-form counts.
    """
    t0 = time.perf_counter()
    res = SuiteResult("unbiasedness enumeration", 0)
    for S in range(2, max_S + 1):
        for T in T_values:
            for B in range(T, S + 1):
                res.cases += 1
                pairs = enumerate_estimates(S, B, T)
                total = sum(c for _, c in pairs)
                mean = sum((e * c for e, c in pairs), Fraction(0)) / total
                if total != math.comb(S, B) or mean != B:
                    res.failures.append({"S": S, "B": B, "T": T, "mean": str(mean)})
                    continue
                if math.comb(S, B) <= brute_force_limit:
                    if dict(enumerate_estimates_bruteforce(S, B, T)) != dict(pairs):
                        res.failures.append({"S": S, "B": B, "T": T, "mismatch": True})
    res.seconds = time.perf_counter() - t0
    return res


def run_all(quick: bool = False, seed: int = 0) -> list[SuiteResult]:
    scale = 10 if quick else 1
    return [ledger_fuzz(1000 // scale, seed),
            pool_soundness(10_000 // scale, seed),
            unbiasedness_enumeration()]
