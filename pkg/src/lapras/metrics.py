"""Error metrics over answered queries."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

METRIC_NAMES = ("mae", "rmse", "nmae", "nrmse_range", "mape", "smape")


@dataclass(frozen=True)
class ErrorReport:
    mae: float
    rmse: float
    nmae: Optional[float]
    nrmse_range: Optional[float]
    mape: Optional[float]
    smape: float
    n_answered: int
    n_refused: int

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(answers, truths, denominators: Optional[tuple[float, float]] = None
                    ) -> ErrorReport:
    """Metrics over the answered pairs; NaN answers count as refused.

    ``denominators`` is (truth mean, truth range) for NMAE and range-normalized
    RMSE; by default both come from the answered truths. A zero denominator
    makes the corresponding metric absent (None) rather than infinite.
    """
    a = np.asarray(answers, dtype=float)
    t = np.asarray(truths, dtype=float)
    if a.shape != t.shape:
        raise ValueError(f"answers {a.shape} and truths {t.shape} differ in shape")
    answered = ~np.isnan(a)
    n_refused = int((~answered).sum())
    a, t = a[answered], t[answered]
    if a.size == 0:
        raise ValueError("no answered queries to score")
    err = np.abs(a - t)
    mae = float(err.mean())
    rmse = float(math.sqrt(np.mean(err ** 2)))
    if denominators is None:
        denominators = (float(t.mean()), float(t.max() - t.min()))
    mean_t, range_t = denominators
    nmae = mae / mean_t if mean_t != 0 else None
    nrmse = rmse / range_t if range_t != 0 else None
    nz = t != 0
    mape = float(np.mean(err[nz] / np.abs(t[nz]))) if nz.any() else None
    denom = np.abs(a) + np.abs(t)
    smape = float(np.mean(np.where(denom > 0, 2 * err / np.where(denom > 0, denom, 1), 0.0)))
    return ErrorReport(mae, rmse, nmae, nrmse, mape, smape, int(a.size), n_refused)
