"""Query universes, oracle predictions, stream construction, histogram ingestion."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from lapras.allocation import ConfigError
from lapras.matrix_mechanism import canonical_key

logger = logging.getLogger(__name__)

ORDERS = ("uniform_random", "bad_first")


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class QueryUniverse:
    kind: str
    n: int
    queries: np.ndarray
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.queries)


def range_universe(n: int) -> QueryUniverse:
    """All half-open intervals [i, j), ordered by (i, j)."""
    if n < 1:
        raise ConfigError(f"domain size must be positive, got {n}")
    rows = []
    for i in range(n):
        for j in range(i + 1, n + 1):
            q = np.zeros(n)
            q[i:j] = 1.0
            rows.append(q)
    return QueryUniverse("range", n, np.array(rows))


def random_binary_universe(n: int, count: int, seed: int) -> QueryUniverse:
    """`count` distinct nonzero 0/1 vectors with iid fair-coin coordinates."""
    if count < 1:
        raise ConfigError(f"count must be positive, got {count}")
    if n < 63 and count > 2 ** n - 1:
        raise ConfigError(f"only {2 ** n - 1} nonzero binary vectors exist for n={n}")
    rng = np.random.default_rng(seed)
    seen = set()
    rows = []
    while len(rows) < count:
        q = rng.integers(0, 2, size=n).astype(float)
        if not q.any():
            continue
        k = canonical_key(q)
        if k in seen:
            continue
        seen.add(k)
        rows.append(q)
    return QueryUniverse("random_binary", n, np.array(rows), seed)


@dataclass
class PredictionSet:
    """Oracle output: canonical keys of the predicted queries plus the rows."""

    queries: np.ndarray
    _keys: set = field(default_factory=set, repr=False)

    def __post_init__(self):
        rows = np.asarray(self.queries, dtype=float)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, 0)
        keys = []
        uniq = []
        for q in rows:
            k = canonical_key(q)
            if k not in self._keys:
                self._keys.add(k)
                keys.append(k)
                uniq.append(q)
        self.queries = np.array(uniq) if uniq else rows[:0]

    def __contains__(self, q) -> bool:
        return canonical_key(q) in self._keys

    def __len__(self) -> int:
        return len(self.queries)


def oracle_predict(universe: QueryUniverse, size: int, seed) -> PredictionSet:
    """Uniform sample without replacement from the universe."""
    if not 0 <= size <= len(universe):
        raise ConfigError(f"prediction size {size} outside [0, {len(universe)}]")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(universe), size=size, replace=False)
    return PredictionSet(universe.queries[idx])


@dataclass(frozen=True)
class StreamSpec:
    S: int
    rho: float
    order: str = "uniform_random"
    seed: Optional[int] = None

    @property
    def n_predicted(self) -> int:
        # Guard against float products like 0.7 * 100 = 69.999...
        return int(math.floor(self.rho * self.S + 1e-9))


@dataclass(frozen=True)
class Stream:
    queries: np.ndarray
    from_prediction: np.ndarray
    realized_bad: int

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)


def build_stream(P: PredictionSet, u_rand: QueryUniverse, spec: StreamSpec,
                 rng: Optional[np.random.Generator] = None) -> Stream:
    """Mix floor(rho S) predicted and S - floor(rho S) random queries.

    Realized bad count is measured by membership in P, so random queries that
    happen to collide with P count as good.
    """
    if spec.S < 1:
        raise ConfigError("stream length must be positive")
    if not 0.0 <= spec.rho <= 1.0:
        raise ConfigError(f"rho must be in [0, 1], got {spec.rho}")
    if spec.order not in ORDERS:
        raise ConfigError(f"unknown order {spec.order!r}")
    k = spec.n_predicted
    if k > len(P):
        raise ConfigError(f"need {k} predicted queries but |P| = {len(P)}")
    if spec.S - k > len(u_rand):
        raise ConfigError(f"need {spec.S - k} random queries but |U_rand| = {len(u_rand)}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    good = P.queries[rng.choice(len(P), size=k, replace=False)] if k else \
        np.zeros((0, u_rand.n))
    bad = u_rand.queries[rng.choice(len(u_rand), size=spec.S - k, replace=False)] \
        if spec.S - k else np.zeros((0, u_rand.n))
    src = np.concatenate([np.ones(k, dtype=bool), np.zeros(spec.S - k, dtype=bool)])
    rows = np.concatenate([good, bad]) if k and spec.S - k else (good if k else bad)
    if spec.order == "uniform_random":
        perm = rng.permutation(spec.S)
    else:
        perm = np.concatenate([k + rng.permutation(spec.S - k), rng.permutation(k)])
    rows = rows[perm]
    src = src[perm]
    realized_bad = sum(1 for q in rows if q not in P)
    return Stream(rows, src, realized_bad)


def dump_queries(queries, path: Union[str, Path]) -> None:
    """One query per line, space-separated coefficients."""
    with open(path, "w") as fh:
        for q in np.atleast_2d(queries):
            fh.write(" ".join(repr(float(v)) for v in q) + "\n")


def load_queries(path: Union[str, Path]) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split()])
    return np.array(rows)


def ingest_histogram(path: Union[str, Path], column: str, binning: str = "categorical",
                     *, bins: Optional[int] = None,
                     bounds: Optional[Sequence[float]] = None) -> np.ndarray:
    """Histogram of one CSV column.

    ``binning`` is "categorical" (one bin per distinct label, sorted) or
    "fixed_width" with ``bins`` right-open bins spanning ``bounds``
    (defaults to the observed min/max); the last bin is closed and
    out-of-range values are dropped with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise IngestionError(f"{path}: column {column!r} not found "
                                 f"(have {reader.fieldnames})")
        values = []
        bad_rows = []
        for lineno, row in enumerate(reader, start=2):
            v = row.get(column)
            if v is None or v.strip() == "":
                bad_rows.append(lineno)
                continue
            values.append((lineno, v.strip()))
    if binning == "categorical":
        if bad_rows:
            raise IngestionError(f"{path}: empty {column!r} at rows {bad_rows[:10]}")
        if not values:
            raise IngestionError(f"{path}: no rows")
        labels = sorted({v for _, v in values})
        pos = {lab: i for i, lab in enumerate(labels)}
        x = np.zeros(len(labels))
        for _, v in values:
            x[pos[v]] += 1
        return x
    if binning != "fixed_width":
        raise ConfigError(f"unknown binning {binning!r}")
    if not bins or bins < 1:
        raise ConfigError("fixed_width binning needs a positive bin count")
    nums = []
    for lineno, v in values:
        try:
            nums.append(float(v))
        except ValueError:
            bad_rows.append(lineno)
    if bad_rows:
        raise IngestionError(f"{path}: unparseable {column!r} at rows {sorted(bad_rows)[:10]}")
    if not nums:
        raise IngestionError(f"{path}: no rows")
    nums = np.array(nums)
    lo, hi = (float(nums.min()), float(nums.max())) if bounds is None else map(float, bounds)
    if not hi > lo:
        hi = lo + 1.0
    inside = (nums >= lo) & (nums <= hi)
    dropped = int((~inside).sum())
    if dropped:
        logger.warning("%s: dropped %d out-of-range values of %r", path, dropped, column)
    width = (hi - lo) / bins
    idx = np.floor((nums[inside] - lo) / width).astype(int)
    idx = np.clip(idx, 0, bins - 1)
    x = np.bincount(idx, minlength=bins).astype(float)
    if x.sum() == 0:
        raise IngestionError(f"{path}: no values inside [{lo}, {hi}]")
    return x
