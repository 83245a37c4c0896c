"""Command-line entry point: run sweeps, calibrate noise, probe the estimator, verify."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from lapras.allocation import ConfigError
from lapras.dp import BudgetExceeded, PrivacyParams, agm_sigma, classic_gaussian_sigma
from lapras.engine import InvariantViolation
from lapras.estimator import sample_stopping_estimates, variance_bound, warmup_length
from lapras.harness import ExperimentError, emit_results, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _cmd_run(args) -> int:
    config = load_config(args.config, seed=args.seed)
    rows = run_experiment(config)
    out = args.output or config.output or str(Path(args.config).with_suffix(".csv"))
    fmt = args.format or ("json" if out.endswith(".json") else "csv")
    for p in emit_results(rows, fmt, out):
        print(f"wrote {p}")
    for r in rows:
        mae = r.aggregates["mae"]
        print(f"{r.mechanism:20s} {r.split:13s} rho={r.rho:<5g} {r.order:15s} "
              f"median MAE {mae['median']:.4f} [{mae['min']:.4f}, {mae['max']:.4f}]")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    params = PrivacyParams(args.eps, args.delta)
    sigma = agm_sigma(args.sensitivity, params)
    print(f"analytic gaussian sigma: {sigma:.6f}")
    if args.eps < 1:
        print(f"classical gaussian sigma: {classic_gaussian_sigma(args.sensitivity, params):.6f}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    S, B = args.S, args.B
    T = args.T or warmup_length(S)
    if not 2 <= T <= B <= S:
        raise ConfigError(f"need 2 <= T <= B <= S, got T={T}, B={B}, S={S}")
    rng = np.random.default_rng(args.seed)
    est = sample_stopping_estimates(S, B, T, args.trials, rng)
    mean = float(est.mean())
    se = float(est.std(ddof=1) / math.sqrt(est.size)) if est.size > 1 else float("nan")
    print(f"S={S} B={B} T={T} trials={est.size}")
    print(f"mean estimate {mean:.4f} (bias {mean - B:+.4f}, standard error {se:.4f})")
    print(f"variance {float(est.var(ddof=1)) if est.size > 1 else float('nan'):.4f}")
    if T >= 3:
        print(f"variance bound {variance_bound(S, B, T):.4f}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from lapras.verify import run_all
    ok = True
    for res in run_all(quick=args.quick, seed=args.seed or 0):
        print(res.summary())
        for f in res.failures[:5]:
            print(f"  {f}")
        ok &= res.ok
    return EXIT_OK if ok else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lapras", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the experiment sweep described by an INI file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override the config's base seed")
    p.add_argument("--output", help="result path (default: config's output)")
    p.add_argument("--format", choices=("csv", "json"))
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("calibrate", help="print the analytic Gaussian noise scale")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--sensitivity", type=float, default=1.0)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("estimate", help="Monte Carlo report on the stopping-time estimator")
    p.add_argument("--S", type=int, required=True)
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--T", type=int, help="warm-up length (default: from S)")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("verify", help="run the invariant suites")
    p.add_argument("--quick", action="store_true", help="a tenth of the fuzz cases")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:  # ConfigError and IngestionError included
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, BudgetExceeded, ExperimentError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
