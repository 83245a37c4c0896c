"""Workload-aware batch release via the matrix mechanism.

A strategy matrix A is answered with Gaussian noise, and workload answers are
reconstructed as W A^+ y. Strategy choice minimizes the scale-invariant proxy
``sensitivity(A)**2 * ||W A^+||_F**2``, which is proportional to the total
reconstruction variance at any fixed privacy level.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from lapras.dp import PrivacyLedger, PrivacyParams, agm_sigma

logger = logging.getLogger(__name__)

PINV_RCOND = 1e-10
SUPPORT_TOL = 1e-8
CANONICAL_DECIMALS = 12

STRATEGY_KINDS = ("identity", "workload", "hierarchical", "optimized")


class NotCovered(LookupError):
    """Query is not among the precomputed workload rows."""


class UnsupportedWorkload(ValueError):
    pass


def canonical_key(q) -> bytes:
    """Hashable key for exact query membership.

    Coefficients are rounded to 12 decimals; -0.0 is folded into 0.0.
    """
    v = np.round(np.asarray(q, dtype=float), CANONICAL_DECIMALS) + 0.0
    return v.tobytes()


def as_workload(rows) -> np.ndarray:
    W = np.atleast_2d(np.asarray(rows, dtype=float))
    if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] < 1:
        raise ValueError(f"workload must be a nonempty 2-d array, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValueError("workload has non-finite entries")
    if np.any(~W.any(axis=1)):
        raise ValueError("workload has an all-zero row")
    return W


def pseudoinverse(A) -> np.ndarray:
    """Moore-Penrose pseudoinverse by SVD, cutting singular values below
    1e-10 times the largest."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros(A.shape[::-1])
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.shape[::-1])
    keep = s > PINV_RCOND * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def penrose_residual(A, A_pinv) -> float:
    """Max-norm violation over the four Penrose conditions."""
    A = np.asarray(A, dtype=float)
    X = np.asarray(A_pinv, dtype=float)
    AX = A @ X
    XA = X @ A
    return float(max(
        np.max(np.abs(AX @ A - A), initial=0.0),
        np.max(np.abs(XA @ X - X), initial=0.0),
        np.max(np.abs(AX - AX.T), initial=0.0),
        np.max(np.abs(XA - XA.T), initial=0.0),
    ))


def l2_sensitivity(A) -> float:
    """Max column 2-norm: the L2 change of Ax when one record moves one bin count."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        raise ValueError("empty strategy")
    return float(np.max(np.linalg.norm(A, axis=0)))


@dataclass(frozen=True)
class StrategyMatrix:
    matrix: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")


def supports(W, A, tol: float = SUPPORT_TOL) -> bool:
    """True if every row of W lies in the row space of A."""
    W = np.asarray(W, dtype=float)
    A = np.asarray(A, dtype=float)
    resid = W - (W @ pseudoinverse(A)) @ A
    return bool(np.max(np.abs(resid), initial=0.0) <= tol * max(1.0, np.max(np.abs(W))))


def strategy_objective(W, A) -> float:
    W = np.asarray(W, dtype=float)
    A = np.asarray(getattr(A, "matrix", A), dtype=float)
    if not supports(W, A):
        raise UnsupportedWorkload("strategy does not support the workload")
    recon = W @ pseudoinverse(A)
    return l2_sensitivity(A) ** 2 * float(np.sum(recon * recon))


def hierarchical_strategy(n: int) -> np.ndarray:
    """Binary tree of interval sums over n bins, padded to a power of two.

    Phantom bins carry zero weight, so their columns are dropped; nodes that
    cover only phantom bins vanish.
    """
    if n < 1:
        raise ValueError("n must be positive")
    size = 1
    while size < n:
        size *= 2
    rows = []
    width = size
    while width >= 1:
        for start in range(0, size, width):
            lo, hi = start, min(start + width, n)
            if lo < hi:
                row = np.zeros(n)
                row[lo:hi] = 1.0
                rows.append(row)
        width //= 2
    return np.array(rows)


@dataclass(frozen=True)
class StrategyConfig:
    candidates: tuple[str, ...] = STRATEGY_KINDS
    max_iter: int = 500
    rel_tol: float = 1e-7
    seed: int = 0


def _trace_objective(X, A):
    # ||W A^+||_F^2 = tr(W^T W (A^T A)^-1) for full column rank A.
    M = A.T @ A
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return np.inf, None
    Minv = np.linalg.inv(M)
    Minv = 0.5 * (Minv + Minv.T)
    return float(np.sum(X * Minv)), Minv


def _project_columns(A):
    norms = np.linalg.norm(A, axis=0)
    scale = np.where(norms > 1.0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    return A * scale


def optimize_strategy(W, A0, config: StrategyConfig = StrategyConfig()) -> Optional[np.ndarray]:
    """Projected gradient descent on ||W A^+||_F^2 over column norms <= 1.

    The start must have full column rank. Returns None if the iteration
    breaks down (singular Gram matrix or non-finite values).
    """
    W = np.asarray(W, dtype=float)
    X = W.T @ W
    A = np.asarray(A0, dtype=float)
    A = A / l2_sensitivity(A)
    f, Minv = _trace_objective(X, A)
    if not np.isfinite(f):
        return None
    rng = np.random.default_rng(config.seed)
    # Tiny deterministic jitter breaks the symmetry of structured starts.
    A = _project_columns(A + 1e-6 * rng.standard_normal(A.shape))
    f, Minv = _trace_objective(X, A)
    step = 1.0
    it = 0
    for it in range(config.max_iter):
        grad = -2.0 * A @ (Minv @ X @ Minv)
        gnorm = np.linalg.norm(grad)
        if not np.isfinite(gnorm):
            return None
        if gnorm == 0:
            break
        accepted = False
        for _ in range(40):
            A_new = _project_columns(A - step * grad)
            f_new, Minv_new = _trace_objective(X, A_new)
            diff = A_new - A
            if np.isfinite(f_new) and f_new <= f - 1e-4 / step * np.sum(diff * diff):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = (f - f_new) / f
        A, f, Minv = A_new, f_new, Minv_new
        step *= 2.0
        if improvement < config.rel_tol:
            break
    if not np.all(np.isfinite(A)):
        return None
    logger.debug("optimizer stopped after %d iterations, objective %.6g", it + 1, f)
    return A


def select_strategy(W, config: StrategyConfig = StrategyConfig()) -> StrategyMatrix:
    """Pick the candidate strategy with the smallest proxy objective."""
    W = as_workload(W)
    n = W.shape[1]
    scored: list[tuple[float, StrategyMatrix]] = []
    fixed = {
        "identity": lambda: np.eye(n),
        "workload": lambda: W.copy(),
        "hierarchical": lambda: hierarchical_strategy(n),
    }
    for kind in config.candidates:
        if kind in fixed:
            A = fixed[kind]()
            try:
                scored.append((strategy_objective(W, A), StrategyMatrix(A, kind)))
            except UnsupportedWorkload:
                continue
    if not scored:
        raise UnsupportedWorkload("no candidate strategy supports the workload")
    scored.sort(key=lambda t: t[0])
    best_obj, best = scored[0]

    if "optimized" in config.candidates:
        # Gradient needs an invertible Gram matrix: start from the best
        # full-column-rank fixed candidate.
        starts = [s for _, s in scored if np.linalg.matrix_rank(s.matrix) == n]
        if starts:
            try:
                A_opt = optimize_strategy(W, starts[0].matrix, config)
            except np.linalg.LinAlgError:
                A_opt = None
            if A_opt is not None:
                try:
                    obj = strategy_objective(W, A_opt)
                except UnsupportedWorkload:
                    obj = np.inf
                if obj < best_obj:
                    best_obj, best = obj, StrategyMatrix(A_opt, "optimized")
            else:
                logger.warning("strategy optimizer diverged; using %s", best.kind)
    return best


_STRATEGY_CACHE: "OrderedDict[tuple, StrategyMatrix]" = OrderedDict()
_STRATEGY_CACHE_SIZE = 64


def cached_select_strategy(W, config: StrategyConfig = StrategyConfig()) -> StrategyMatrix:
    """`select_strategy` memoized on the workload bytes and config."""
    W = as_workload(W)
    key = (W.shape, W.tobytes(), config)
    hit = _STRATEGY_CACHE.get(key)
    if hit is not None:
        _STRATEGY_CACHE.move_to_end(key)
        return hit
    strategy = select_strategy(W, config)
    _STRATEGY_CACHE[key] = strategy
    if len(_STRATEGY_CACHE) > _STRATEGY_CACHE_SIZE:
        _STRATEGY_CACHE.popitem(last=False)
    return strategy


@dataclass(frozen=True)
class PrecomputedAnswers:
    """Noisy workload answers released once by the matrix mechanism.

    Lookups are pure post-processing and never touch a ledger.
    """

    workload: np.ndarray
    reconstruction: np.ndarray
    per_query_variance: np.ndarray
    sigma_used: float
    strategy: Optional[StrategyMatrix] = None
    query_index: dict = field(default_factory=dict, repr=False)

    @classmethod
    def empty(cls, n: int = 0) -> "PrecomputedAnswers":
        return cls(np.zeros((0, n)), np.zeros(0), np.zeros(0), 0.0, None, {})

    def __len__(self) -> int:
        return len(self.reconstruction)

    def __contains__(self, q) -> bool:
        return canonical_key(q) in self.query_index

    def index_of(self, q) -> int:
        try:
            return self.query_index[canonical_key(q)]
        except KeyError:
            raise NotCovered("query not in precomputed workload") from None

    def answer(self, q) -> float:
        return float(self.reconstruction[self.index_of(q)])

    def variance(self, q) -> float:
        return float(self.per_query_variance[self.index_of(q)])


def answer_from_precomputed(pre: PrecomputedAnswers, q) -> float:
    return pre.answer(q)


def dedupe_queries(queries) -> np.ndarray:
    """Distinct rows in first-seen order (by canonical key)."""
    seen = {}
    rows = []
    for q in queries:
        k = canonical_key(q)
        if k not in seen:
            seen[k] = len(rows)
            rows.append(np.asarray(q, dtype=float))
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows)


def run_matrix_mechanism(P_workload, x, eps: float, delta_i: float,
                         ledger: Optional[PrivacyLedger], rng: np.random.Generator,
                         *, strategy: Optional[StrategyMatrix] = None,
                         config: StrategyConfig = StrategyConfig(),
                         noise: bool = True,
                         label: str = "matrix_mechanism") -> PrecomputedAnswers:
    """Release the workload once with Gaussian noise on a selected strategy.

    Charges (eps, delta_i) to the ledger before drawing noise. An empty
    workload charges nothing and answers nothing. ``noise=False`` is a test
    hook that forces sigma to zero; the charge is still made.
    """
    x = np.asarray(x, dtype=float)
    P = dedupe_queries(P_workload) if len(P_workload) else np.zeros((0, x.size))
    if P.shape[0] == 0:
        return PrecomputedAnswers.empty(x.size)
    W = as_workload(P)
    if W.shape[1] != x.size:
        raise ValueError(f"workload width {W.shape[1]} != data size {x.size}")
    if strategy is None:
        strategy = cached_select_strategy(W, config)
    A = strategy.matrix
    sens = l2_sensitivity(A)
    sigma = agm_sigma(sens, PrivacyParams(eps, delta_i))
    if ledger is not None:
        ledger.charge(label, eps, delta_i)
    if not noise:
        sigma = 0.0
    z = rng.standard_normal(A.shape[0])
    y = A @ x + sigma * z
    recon_op = W @ pseudoinverse(A)
    reconstruction = recon_op @ y
    variance = sigma ** 2 * np.sum(recon_op * recon_op, axis=1)
    index = {canonical_key(row): i for i, row in enumerate(W)}
    return PrecomputedAnswers(W, reconstruction, variance, float(sigma), strategy, index)
