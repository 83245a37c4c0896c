"""Experiment configuration, seeded sweeps, aggregation and result files.

A sweep runs every mechanism over every (split, rho, order, run) cell.
Streams depend only on (rho, order, run), so all mechanisms in a cell see the
same queries; noise seeds additionally depend on the mechanism and split.
All seeds derive from the base seed through `numpy.random.SeedSequence`.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from lapras.allocation import SPLITS, ConfigError, split_budget
from lapras.baselines import offline_mm, online_independent
from lapras.dp import BudgetExceeded
from lapras.engine import EngineConfig, InvariantViolation, process_stream
from lapras.fixtures import load_fixture
from lapras.matrix_mechanism import StrategyConfig
from lapras.metrics import METRIC_NAMES, compute_metrics
from lapras.workload import (ORDERS, PredictionSet, StreamSpec, build_stream,
                             ingest_histogram, oracle_predict, random_binary_universe,
                             range_universe)

logger = logging.getLogger(__name__)

MECHANISMS = ("lapras_static", "lapras_smooth", "lapras_smooth_cache",
              "online_independent", "offline_mm")
BASELINES = ("online_independent", "offline_mm")

# Tags keep the seed families for different purposes disjoint.
_TAG_PREDICT, _TAG_UNIVERSE, _TAG_STREAM, _TAG_NOISE = 1, 2, 3, 4


class ExperimentError(RuntimeError):
    def __init__(self, message: str, indices: tuple, seed: int):
        super().__init__(f"{message} at indices {indices} (seed {seed})")
        self.indices = indices
        self.seed = seed


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    source: str = "fixture:adult_age"
    column: Optional[str] = None
    binning: str = "categorical"
    bins: Optional[int] = None
    bounds: Optional[tuple[float, float]] = None
    universe: str = "range"
    prediction_size: int = 100
    random_queries: int = 200
    stream_length: int = 100
    rho: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    orders: tuple[str, ...] = ("uniform_random",)
    eps: float = 1.0
    delta: float = 1e-3
    eps_min: Optional[float] = None
    splits: tuple[str, ...] = ("matrix_heavy", "query_heavy")
    mechanisms: tuple[str, ...] = MECHANISMS
    runs: int = 5
    seed: int = 0
    strategy: StrategyConfig = StrategyConfig()
    residual_tol: float = 1e-6
    output: Optional[str] = None
    fixture_dir: str = ".lapras_fixtures"

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if any(not 0.0 <= r <= 1.0 for r in self.rho):
            raise ConfigError(f"rho grid must lie in [0, 1], got {self.rho}")
        for o in self.orders:
            if o not in ORDERS:
                raise ConfigError(f"unknown order {o!r}")
        for s in self.splits:
            if s not in SPLITS:
                raise ConfigError(f"unknown split {s!r}")
        for m in self.mechanisms:
            if m not in MECHANISMS:
                raise ConfigError(f"unknown mechanism {m!r}")
        if self.universe not in ("range", "random_binary"):
            raise ConfigError(f"unknown universe {self.universe!r}")
        if not (self.eps > 0 and 0 < self.delta < 1):
            raise ConfigError("need eps > 0 and 0 < delta < 1")


def load_config(path: Union[str, Path], seed: Optional[int] = None) -> ExperimentConfig:
    """Read an INI experiment file; ``seed`` overrides the file's base seed."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not cp.read(path):
        raise ConfigError(f"cannot read config {path}")
    kw: dict = {}
    try:
        if cp.has_section("experiment"):
            sec = cp["experiment"]
            kw["name"] = sec.get("name", path.stem)
            kw["runs"] = sec.getint("runs", 5)
            kw["seed"] = sec.getint("seed", 0)
            if "mechanisms" in sec:
                kw["mechanisms"] = tuple(_csv_list(sec["mechanisms"]))
            if "output" in sec:
                out = Path(sec["output"])
                kw["output"] = os.path.normpath(out if out.is_absolute() else path.parent / out)
            if "fixture_dir" in sec:
                fx = Path(sec["fixture_dir"])
                kw["fixture_dir"] = os.path.normpath(fx if fx.is_absolute() else path.parent / fx)
        if cp.has_section("data"):
            sec = cp["data"]
            src = sec.get("source", "fixture:adult_age")
            if src.startswith("csv:") and not Path(src[4:]).is_absolute():
                src = "csv:" + str(path.parent / src[4:])
            kw["source"] = src
            kw["column"] = sec.get("column")
            kw["binning"] = sec.get("binning", "categorical")
            if "bins" in sec:
                kw["bins"] = sec.getint("bins")
            if "lo" in sec and "hi" in sec:
                kw["bounds"] = (sec.getfloat("lo"), sec.getfloat("hi"))
        if cp.has_section("privacy"):
            sec = cp["privacy"]
            kw["eps"] = sec.getfloat("epsilon", 1.0)
            kw["delta"] = sec.getfloat("delta", 1e-3)
            if "eps_min" in sec:
                kw["eps_min"] = sec.getfloat("eps_min")
        if cp.has_section("workload"):
            sec = cp["workload"]
            kw["universe"] = sec.get("predicted_universe", "range")
            kw["prediction_size"] = sec.getint("prediction_size", 100)
            kw["random_queries"] = sec.getint("random_queries", 200)
            kw["stream_length"] = sec.getint("stream_length", 100)
        if cp.has_section("sweep"):
            sec = cp["sweep"]
            if "rho" in sec:
                kw["rho"] = tuple(float(v) for v in _csv_list(sec["rho"]))
            if "orders" in sec:
                kw["orders"] = tuple(_csv_list(sec["orders"]))
            if "splits" in sec:
                kw["splits"] = tuple(_csv_list(sec["splits"]))
        if cp.has_section("strategy"):
            sec = cp["strategy"]
            kw["strategy"] = StrategyConfig(
                candidates=tuple(_csv_list(sec.get("candidates",
                                                   "identity, workload, hierarchical, optimized"))),
                max_iter=sec.getint("max_iter", 500),
                rel_tol=sec.getfloat("rel_tol", 1e-7),
                seed=sec.getint("seed", 0))
        if cp.has_section("cache"):
            kw["residual_tol"] = cp["cache"].getfloat("residual_tol", 1e-6)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if seed is not None:
        kw["seed"] = seed
    return ExperimentConfig(**kw)


def derive_seed(base: int, *indices: int) -> int:
    """64-bit seed determined by the base seed and a grid position."""
    ss = np.random.SeedSequence(entropy=base, spawn_key=tuple(int(i) for i in indices))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def load_data(config: ExperimentConfig) -> np.ndarray:
    src = config.source
    if src.startswith("fixture:"):
        return load_fixture(src.split(":", 1)[1], config.fixture_dir)
    if src.startswith("csv:"):
        if not config.column:
            raise ConfigError("csv source needs a column")
        return ingest_histogram(src[4:], config.column, config.binning,
                                bins=config.bins, bounds=config.bounds)
    raise ConfigError(f"unknown data source {src!r}")


@dataclass
class ResultRow:
    mechanism: str
    split: str
    rho: float
    order: str
    runs: int
    aggregates: dict = field(default_factory=dict)  # metric -> {median, min, max}
    wasted_eps_median: float = 0.0
    n_refused_median: float = 0.0
    online_eps_median: float = 0.0
    trial_mae: list = field(default_factory=list)

    def flat(self) -> dict:
        out = {"mechanism": self.mechanism, "split": self.split, "rho": self.rho,
               "order": self.order, "runs": self.runs}
        for m in METRIC_NAMES:
            agg = self.aggregates.get(m) or {}
            for stat in ("median", "min", "max"):
                out[f"{m}_{stat}"] = agg.get(stat)
        out["wasted_eps_median"] = self.wasted_eps_median
        out["n_refused_median"] = self.n_refused_median
        out["online_eps_median"] = self.online_eps_median
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRow":
        return cls(**d)


def aggregate(values: Sequence[Optional[float]]) -> Optional[dict]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    return {"median": float(np.median(vals)), "min": float(np.min(vals)),
            "max": float(np.max(vals))}


@dataclass
class Workbench:
    """Everything shared across the trials of one sweep."""

    x: np.ndarray
    P: PredictionSet
    u_rand: object


def prepare(config: ExperimentConfig) -> Workbench:
    x = load_data(config)
    n = x.size
    if config.universe == "range":
        universe = range_universe(n)
    else:
        universe = random_binary_universe(n, max(config.prediction_size, 1),
                                          derive_seed(config.seed, _TAG_UNIVERSE, 0))
    P = oracle_predict(universe, config.prediction_size,
                       derive_seed(config.seed, _TAG_PREDICT))
    u_rand = random_binary_universe(n, config.random_queries,
                                    derive_seed(config.seed, _TAG_UNIVERSE, 1))
    return Workbench(x, P, u_rand)


def run_trial(mechanism: str, split: Optional[str], stream, bench: Workbench,
              config: ExperimentConfig, seed: int):
    """One mechanism on one stream; returns (ErrorReport, wasted_eps, online_eps)."""
    rng = np.random.default_rng(seed)
    x = bench.x
    if mechanism == "online_independent":
        res = online_independent(stream, x, config.eps, config.delta, rng)
        return compute_metrics(res.answers, res.truths), 0.0, res.total_eps
    if mechanism == "offline_mm":
        res = offline_mm(stream.queries, x, config.eps, config.delta, rng,
                         config=config.strategy)
        return compute_metrics(res.answers, res.truths), 0.0, 0.0
    smooth = mechanism != "lapras_static"
    plan = split_budget(config.eps, split, smooth, delta=config.delta,
                        stream_length=len(stream), eps_min=config.eps_min)
    ecfg = EngineConfig(strategy=config.strategy, cache=mechanism == "lapras_smooth_cache",
                        residual_tol=config.residual_tol)
    answers, trace = process_stream(stream, x, bench.P, plan, ecfg, rng)
    return compute_metrics(answers, trace.truths), trace.wasted_eps, trace.online_eps


def sweep_seeds(config: ExperimentConfig) -> list[int]:
    """Every seed the sweep would draw, for collision checks."""
    seeds = [derive_seed(config.seed, _TAG_PREDICT),
             derive_seed(config.seed, _TAG_UNIVERSE, 0),
             derive_seed(config.seed, _TAG_UNIVERSE, 1)]
    for ri in range(len(config.rho)):
        for oi in range(len(config.orders)):
            for run in range(config.runs):
                seeds.append(derive_seed(config.seed, _TAG_STREAM, ri, oi, run))
                for mi in range(len(config.mechanisms)):
                    for si in range(len(config.splits)):
                        seeds.append(derive_seed(config.seed, _TAG_NOISE, mi, si, ri, oi, run))
    return seeds


def run_experiment(config: ExperimentConfig, bench: Optional[Workbench] = None
                   ) -> list[ResultRow]:
    bench = bench or prepare(config)
    rows: list[ResultRow] = []
    cells: dict[tuple, list] = {}
    for ri, rho in enumerate(config.rho):
        for oi, order in enumerate(config.orders):
            for run in range(config.runs):
                sseed = derive_seed(config.seed, _TAG_STREAM, ri, oi, run)
                spec = StreamSpec(config.stream_length, rho, order, sseed)
                stream = build_stream(bench.P, bench.u_rand, spec)
                for mi, mech in enumerate(config.mechanisms):
                    splits = ["-"] if mech in BASELINES else list(config.splits)
                    for si, split in enumerate(splits):
                        seed = derive_seed(config.seed, _TAG_NOISE, mi, si, ri, oi, run)
                        idx = (mech, split, rho, order, run)
                        try:
                            report, wasted, online = run_trial(
                                mech, None if split == "-" else split, stream, bench,
                                config, seed)
                        except (InvariantViolation, BudgetExceeded) as exc:
                            raise ExperimentError(str(exc), idx, seed) from exc
                        cells.setdefault((mech, split, rho, order), []).append(
                            (report, wasted, online))
    for (mech, split, rho, order), trials in cells.items():
        aggs = {m: aggregate([getattr(r, m) for r, _, _ in trials]) for m in METRIC_NAMES}
        rows.append(ResultRow(
            mechanism=mech, split=split, rho=rho, order=order, runs=len(trials),
            aggregates=aggs,
            wasted_eps_median=float(np.median([w for _, w, _ in trials])),
            n_refused_median=float(np.median([r.n_refused for r, _, _ in trials])),
            online_eps_median=float(np.median([o for _, _, o in trials])),
            trial_mae=[r.mae for r, _, _ in trials]))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def emit_results(rows: Sequence[ResultRow], format: str, path: Union[str, Path]) -> list[Path]:
    """Write rows as csv (4 decimals) or json (full precision), plus one
    two-column ``rho mae`` plot-data file per mechanism/split."""
    if not rows:
        raise ValueError("no rows to emit")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = [path]
    if format == "csv":
        flat = [r.flat() for r in rows]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(flat[0]))
            for f in flat:
                w.writerow([_fmt(v) for v in f.values()])
    elif format == "json":
        meta = {"nmae_denominator": "mean of true answers",
                "nrmse_denominator": "range of true answers",
                "aggregate": "median with min/max over runs"}
        with open(path, "w") as fh:
            json.dump({"meta": meta, "rows": [asdict(r) for r in rows]}, fh, indent=1)
    else:
        raise ValueError(f"unknown format {format!r}")
    series: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        name = r.mechanism if r.split == "-" else f"{r.mechanism}.{r.split}"
        if r.order != "uniform_random":
            name += f".{r.order}"
        series.setdefault(name, []).extend((r.rho, m) for m in r.trial_mae)
    for name, pts in series.items():
        p = path.with_name(f"{path.stem}.{name}.plot.txt")
        with open(p, "w") as fh:
            fh.write("# rho mae\n")
            for rho, mae in pts:
                fh.write(f"{rho!r} {mae!r}\n")
        written.append(p)
    return written


def load_results(path: Union[str, Path]) -> list[ResultRow]:
    with open(path) as fh:
        data = json.load(fh)
    return [ResultRow.from_dict(d) for d in data["rows"]]
