"""Budget splits and per-query spending policies for unpredicted queries."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

# (eps_mm, eps_bad_init, eps_bad, eps_reserve) as fractions of the global epsilon.
SPLITS = {
    "equal": (1 / 4, 1 / 4, 1 / 4, 1 / 4),
    "matrix_heavy": (1 / 2, 1 / 6, 1 / 6, 1 / 6),
    "query_heavy": (1 / 6, 1 / 3, 1 / 3, 1 / 6),
    "reserve_heavy": (1 / 6, 1 / 6, 1 / 6, 1 / 2),
}

EPS_MIN_FRACTION = 1e-4


class ConfigError(ValueError):
    pass


class _Halt:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "HALT"

    def __bool__(self):
        return False


HALT = _Halt()


@dataclass(frozen=True)
class BudgetPlan:
    eps: float
    strategy: str
    eps_mm: float
    eps_bad_init: float
    eps_bad: float
    eps_reserve: float
    eps_min: float
    smooth: bool = False
    delta: Optional[float] = None
    delta_i: Optional[float] = None

    @property
    def eps_pool(self) -> float:
        return self.eps_bad_init + self.eps_bad

    def for_stream(self, delta: float, stream_length: int) -> "BudgetPlan":
        """Fix the per-release delta at delta / (S + 1)."""
        if not 0 < delta < 1:
            raise ConfigError(f"delta must be in (0, 1), got {delta}")
        if stream_length < 1:
            raise ConfigError(f"stream length must be positive, got {stream_length}")
        return replace(self, delta=delta, delta_i=delta / (stream_length + 1))


def split_budget(eps: float, strat: str, smooth: bool = False, *,
                 delta: Optional[float] = None, stream_length: Optional[int] = None,
                 eps_min: Optional[float] = None) -> BudgetPlan:
    if not (math.isfinite(eps) and eps > 0):
        raise ConfigError(f"epsilon must be positive, got {eps}")
    try:
        fractions = SPLITS[strat]
    except KeyError:
        raise ConfigError(f"unknown budget split {strat!r}; "
                          f"choose from {sorted(SPLITS)}") from None
    mm, bad_init, bad, _ = (f * eps for f in fractions)
    # Reserve takes the rounding remainder so the four parts sum to eps.
    reserve = eps - math.fsum([mm, bad_init, bad])
    plan = BudgetPlan(
        eps=eps, strategy=strat, eps_mm=mm, eps_bad_init=bad_init, eps_bad=bad,
        eps_reserve=reserve,
        eps_min=EPS_MIN_FRACTION * eps if eps_min is None else float(eps_min),
        smooth=smooth)
    if plan.eps_min <= 0:
        raise ConfigError("eps_min must be positive")
    if delta is not None:
        if not 0 < delta < 1:
            raise ConfigError(f"delta must be in (0, 1), got {delta}")
        plan = replace(plan, delta=delta)
        if stream_length is not None:
            plan = plan.for_stream(delta, stream_length)
    return plan


Reallocate = Callable[["AllocatorState"], None]


def no_reallocate(state: "AllocatorState") -> None:
    """Default warm-up reallocation hook: leaves budgets untouched."""


@dataclass
class AllocatorState:
    phase: str
    eps_bad_init_rem: float
    eps_bad_rem: float
    eps_reserve_rem: float
    eps_min: float
    T: int
    smooth: bool
    eps_bad_init_initial: float = 0.0
    B_est: float = 0.0
    remBad: float = 0.0
    paced_share: float = 0.0

    @classmethod
    def from_plan(cls, plan: BudgetPlan, T: int) -> "AllocatorState":
        if plan.smooth:
            return cls(phase="warmup", eps_bad_init_rem=0.0, eps_bad_rem=plan.eps_pool,
                       eps_reserve_rem=plan.eps_reserve, eps_min=plan.eps_min, T=T,
                       smooth=True)
        return cls(phase="warmup", eps_bad_init_rem=plan.eps_bad_init,
                   eps_bad_rem=plan.eps_bad, eps_reserve_rem=plan.eps_reserve,
                   eps_min=plan.eps_min, T=T, smooth=False,
                   eps_bad_init_initial=plan.eps_bad_init)

    @property
    def eps_pool_rem(self) -> float:
        return self.eps_bad_rem

    @property
    def unspent(self) -> float:
        return math.fsum([self.eps_bad_init_rem, self.eps_bad_rem, self.eps_reserve_rem])


def exact_draw(remaining: float, amount: float) -> tuple[float, float]:
    """Take ``min(amount, remaining)`` so that draw + new remainder == remaining exactly.

    Whichever of the two parts is at most half the remainder is formed by a
    subtraction that Sterbenz's lemma makes exact, so spends telescope
    without rounding drift and a pool is never overdrawn by accumulation.
    """
    if amount >= remaining:
        return remaining, 0.0
    if amount <= 0.5 * remaining:
        new_rem = remaining - amount
        return remaining - new_rem, new_rem
    return amount, remaining - amount


def smooth_share(pool_rem: float, B_hat: float, b: int) -> float:
    gap = B_hat - b
    return pool_rem / ((gap if gap > 1.0 else 1.0) + 1.0)


def smooth_next_epsilon(state: AllocatorState, B_hat: float, b: int):
    """Spend the pool remainder spread over the projected remaining bad queries."""
    if state.phase not in ("warmup", "paced"):
        raise ValueError(f"smooth pacing is not active in phase {state.phase!r}")
    eps_b, state.eps_bad_rem = exact_draw(state.eps_bad_rem,
                                          smooth_share(state.eps_bad_rem, B_hat, b))
    return eps_b, state


def lock_estimate(state: AllocatorState, B_est: float) -> None:
    """Fix the bad-count estimate at the end of warm-up."""
    state.B_est = B_est
    state.remBad = max(B_est - state.T, 1.0)
    if not state.smooth:
        state.eps_bad_rem += state.eps_bad_init_rem
        state.eps_bad_init_rem = 0.0
        state.paced_share = state.eps_bad_rem / state.remBad
    state.phase = "paced"


def static_next_epsilon(state: AllocatorState, b: int, T: int):
    """Uniform warm-up spend, then uniform spend over the estimated remainder."""
    if b <= T:
        if state.phase != "warmup":
            raise ValueError(f"bad query {b} <= T but phase is {state.phase!r}")
        eps_b, state.eps_bad_init_rem = exact_draw(state.eps_bad_init_rem,
                                                   state.eps_bad_init_initial / T)
        return eps_b, state
    if state.phase != "paced":
        raise ValueError(f"bad query {b} > T but phase is {state.phase!r}")
    eps_b, state.eps_bad_rem = exact_draw(state.eps_bad_rem, state.paced_share)
    return eps_b, state


def reserve_draw(state: AllocatorState):
    """Spend half the reserve remainder, or halt once it is below eps_min."""
    if state.phase == "halted" or state.eps_reserve_rem < state.eps_min:
        state.phase = "halted"
        return HALT, state
    state.phase = "reserve"
    eps_b, state.eps_reserve_rem = exact_draw(state.eps_reserve_rem,
                                              state.eps_reserve_rem / 2)
    return eps_b, state


class Allocator:
    """Decides the epsilon of each unpredicted query under one budget plan."""

    def __init__(self, plan: BudgetPlan, T: int, reallocate: Reallocate = no_reallocate):
        self.plan = plan
        self.T = T
        self.state = AllocatorState.from_plan(plan, T)
        self.reallocate = reallocate

    @property
    def halted(self) -> bool:
        return self.state.phase == "halted"

    def next_epsilon(self, b: int, B_hat: float, locked: bool) -> Union[float, _Halt]:
        """Budget for the b-th bad query given the current estimate.

        ``locked`` says whether the estimate was fixed at the T-th bad query;
        the caller must pass the locked value once it is.
        """
        st = self.state
        if st.phase == "halted":
            return HALT
        if b == self.T and locked and st.phase == "warmup":
            eps_b = self._warmup_step(b, B_hat)
            lock_estimate(st, B_hat)
            return eps_b
        if st.phase == "warmup":
            return self._warmup_step(b, B_hat)
        if st.phase == "reserve":
            return reserve_draw(st)[0]
        if b <= st.B_est:
            if st.smooth:
                return smooth_next_epsilon(st, B_hat, b)[0]
            return static_next_epsilon(st, b, self.T)[0]
        # Past the locked estimate both allocators fall back to the halving
        # reserve; whatever the pool still holds is left unspent.
        return reserve_draw(st)[0]

    def _warmup_step(self, b: int, B_hat: float) -> float:
        if self.state.smooth:
            return smooth_next_epsilon(self.state, B_hat, b)[0]
        self.reallocate(self.state)
        return static_next_epsilon(self.state, b, self.T)[0]
