"""Seeded synthetic stand-ins for the census-age and check-in datasets.

Both generators write a plain CSV so experiments exercise the same ingestion
path a real file would take.

* ``adult_age``: 32,561 rows of integer ages in [17, 80] drawn from a
  shifted gamma (shape 2.2, scale 9) clipped into range. Ingested with 64
  unit-width bins, one per age. Default seed 20240917.
* ``gowalla``: 200,000 check-ins over 5,000 locations with Zipf(1.3)
  popularity; 100 location ids are subsampled uniformly (seed-driven) and
  only check-ins at those ids are kept. Ingested categorically.
  Default seed 20240918.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Union

import numpy as np

from lapras.workload import ingest_histogram

ADULT_SEED = 20240917
GOWALLA_SEED = 20240918
AGE_LO, AGE_HI = 17, 80


def write_adult_age_csv(path: Union[str, Path], seed: int = ADULT_SEED,
                        rows: int = 32561) -> Path:
    rng = np.random.default_rng(seed)
    ages = np.clip(np.round(AGE_LO + rng.gamma(2.2, 9.0, size=rows)), AGE_LO, AGE_HI)
    # Guarantee every age appears so the 64-bin histogram has full support.
    ages[: AGE_HI - AGE_LO + 1] = np.arange(AGE_LO, AGE_HI + 1)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "age"])
        for i, a in enumerate(ages.astype(int)):
            w.writerow([i, a])
    return path


def write_gowalla_csv(path: Union[str, Path], seed: int = GOWALLA_SEED,
                      checkins: int = 200_000, locations: int = 5000,
                      keep: int = 100) -> Path:
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, locations + 1)
    p = ranks ** -1.3
    p /= p.sum()
    loc = rng.choice(locations, size=checkins, p=p)
    kept = rng.choice(locations, size=keep, replace=False)
    loc = loc[np.isin(loc, kept)]
    # Every kept location gets at least one check-in.
    loc = np.concatenate([kept, loc])
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "location"])
        for i, l in enumerate(loc):
            w.writerow([i % 997, f"loc{l:05d}"])
    return path


def load_fixture(name: str, workdir: Union[str, Path]) -> np.ndarray:
    """Generate a named fixture under ``workdir`` (if absent) and ingest it."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if name == "adult_age":
        path = workdir / "adult_age.csv"
        if not path.exists():
            write_adult_age_csv(path)
        return ingest_histogram(path, "age", "fixed_width", bins=AGE_HI - AGE_LO + 1,
                                bounds=(AGE_LO, AGE_HI + 1))
    if name == "gowalla":
        path = workdir / "gowalla.csv"
        if not path.exists():
            write_gowalla_csv(path)
        return ingest_histogram(path, "location", "categorical")
    raise KeyError(f"unknown fixture {name!r}; choose 'adult_age' or 'gowalla'")
