"""Gaussian noise calibration and privacy-loss accounting.

The engine calibrates every release with the analytic Gaussian mechanism
(`agm_sigma`). The classical bound is kept as an upper-bound reference.
Accounting uses basic composition: epsilons and deltas add up.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

_SQRT2 = math.sqrt(2.0)

# Bisection bracket for sigma / sensitivity.
_AGM_LO = 1e-6
_AGM_HI = 1e6
_AGM_HI_LIMIT = 1e15


class CalibrationError(RuntimeError):
    """Noise calibration could not bracket a solution."""


class BudgetExceeded(RuntimeError):
    """A charge would push the ledger past its cap."""

    def __init__(self, label: str, eps_total: float, delta_total: float,
                 cap: "PrivacyParams"):
        self.label = label
        self.eps_total = eps_total
        self.delta_total = delta_total
        self.cap = cap
        super().__init__(
            f"charge {label!r} would spend (eps={eps_total!r}, "
            f"delta={delta_total!r}) against cap (eps={cap.epsilon!r}, "
            f"delta={cap.delta!r})")


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")


def _check_sensitivity(l2_sensitivity: float) -> float:
    s = float(l2_sensitivity)
    if not (math.isfinite(s) and s > 0):
        raise ValueError(f"sensitivity must be positive, got {l2_sensitivity}")
    return s


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def classic_gaussian_sigma(l2_sensitivity: float, params: PrivacyParams) -> float:
    """Classical Gaussian mechanism noise scale.

    Only valid for epsilon < 1; larger values are computed but warned about.
    """
    s = _check_sensitivity(l2_sensitivity)
    if params.epsilon >= 1:
        warnings.warn(
            f"classical Gaussian bound is stated for epsilon < 1, "
            f"got {params.epsilon}", stacklevel=2)
    return s * math.sqrt(2.0 * math.log(1.25 / params.delta)) / params.epsilon


def agm_delta(sigma: float, l2_sensitivity: float, epsilon: float) -> float:
    """Smallest delta for which Gaussian noise of scale sigma is (eps, delta)-DP."""
    a = l2_sensitivity / (2.0 * sigma)
    b = epsilon * sigma / l2_sensitivity
    first = normal_cdf(a - b)
    tail = normal_cdf(-a - b)
    if tail == 0.0:
        return first
    return first - math.exp(epsilon + math.log(tail))


def _agm_unit_sigma(epsilon: float, delta: float) -> float:
    # agm_delta is decreasing in sigma, so bisect for the crossing point.
    lo, hi = _AGM_LO, _AGM_HI
    # Very small epsilon needs sigma beyond the default bracket; grow it.
    while agm_delta(hi, 1.0, epsilon) > delta and hi < _AGM_HI_LIMIT:
        lo, hi = hi, hi * 16
    if agm_delta(hi, 1.0, epsilon) > delta or agm_delta(lo, 1.0, epsilon) <= delta:
        raise CalibrationError(
            f"cannot bracket AGM sigma for epsilon={epsilon}, delta={delta}")
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if agm_delta(mid, 1.0, epsilon) > delta:
            lo = mid
        else:
            hi = mid
    return hi


def agm_sigma(l2_sensitivity: float, params: PrivacyParams) -> float:
    """Smallest Gaussian noise scale meeting the exact (eps, delta) condition.

    The condition depends on sigma only through sigma / sensitivity, so the
    search runs at unit sensitivity and the result is scaled afterwards.
    """
    s = _check_sensitivity(l2_sensitivity)
    return s * _agm_unit_sigma(params.epsilon, params.delta)


def sample_gaussian(sigma: float, rng: np.random.Generator) -> float:
    # Always consume one draw so the stream of variates does not depend on sigma.
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    z = rng.standard_normal()
    return 0.0 if sigma == 0 else float(sigma * z)


@dataclass(frozen=True)
class LedgerEntry:
    label: str
    epsilon: float
    delta: float


@dataclass
class PrivacyLedger:
    """Basic-composition ledger with a hard global cap.

    Totals are recomputed with `math.fsum` over all entries, so they are the
    correctly rounded sum regardless of charge order.
    """

    cap: PrivacyParams
    entries: list[LedgerEntry] = field(default_factory=list)
    rel_slack: float = 1e-12

    @property
    def spent_eps(self) -> float:
        return math.fsum(e.epsilon for e in self.entries)

    @property
    def spent_delta(self) -> float:
        return math.fsum(e.delta for e in self.entries)

    @property
    def remaining_eps(self) -> float:
        return max(self.cap.epsilon - self.spent_eps, 0.0)

    def can_absorb(self, eps_i: float, delta_i: float) -> bool:
        eps_total = math.fsum([self.spent_eps, eps_i])
        delta_total = math.fsum([self.spent_delta, delta_i])
        return (eps_total <= self.cap.epsilon * (1 + self.rel_slack)
                and delta_total <= self.cap.delta * (1 + self.rel_slack))

    def charge(self, label: str, eps_i: float, delta_i: float) -> "PrivacyLedger":
        """Record one release; raises BudgetExceeded and leaves state intact."""
        if eps_i < 0 or delta_i < 0 or not (math.isfinite(eps_i) and math.isfinite(delta_i)):
            raise ValueError(f"charges must be finite and nonnegative, "
                             f"got ({eps_i}, {delta_i})")
        if not self.can_absorb(eps_i, delta_i):
            raise BudgetExceeded(label, math.fsum([self.spent_eps, eps_i]),
                                 math.fsum([self.spent_delta, delta_i]), self.cap)
        self.entries.append(LedgerEntry(label, float(eps_i), float(delta_i)))
        return self

    def __len__(self) -> int:
        return len(self.entries)


def ledger_charge(ledger: PrivacyLedger, label: str, eps_i: float,
                  delta_i: float) -> PrivacyLedger:
    return ledger.charge(label, eps_i, delta_i)
