"""Deployment-shaped train/test splits over a design matrix.

Three strategies: a per-anchor-year random holdout so every year is
represented in test, whole-school holdout, and temporal holdout of the most
recent anchor years.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class SplitResult:
    train_rows: np.ndarray
    test_rows: np.ndarray
    strategy: str
    seed: int | None = None

    def __post_init__(self):
        self.train_rows = np.asarray(sorted(self.train_rows), dtype=int)
        self.test_rows = np.asarray(sorted(self.test_rows), dtype=int)
        train = set(self.train_rows.tolist())
        test = set(self.test_rows.tolist())
        if train & test:
            raise ValueError("train and test row sets overlap")
        if not train or not test:
            raise ValueError("both train and test must be non-empty")

    @property
    def n_rows(self) -> int:
        return len(self.train_rows) + len(self.test_rows)

    def to_json(self, path: str | Path) -> None:
        payload = {
            "strategy": self.strategy,
            "seed": self.seed,
            "train_rows": self.train_rows.tolist(),
            "test_rows": self.test_rows.tolist(),
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))

    @classmethod
    def from_json(cls, path: str | Path) -> "SplitResult":
        payload = json.loads(Path(path).read_text())
        return cls(
            train_rows=np.asarray(payload["train_rows"], dtype=int),
            test_rows=np.asarray(payload["test_rows"], dtype=int),
            strategy=payload["strategy"],
            seed=payload.get("seed"),
        )


def _check_cover(split: SplitResult, n: int) -> SplitResult:
    covered = set(split.train_rows.tolist()) | set(split.test_rows.tolist())
    if covered != set(range(n)):
        raise AssertionError("split does not cover all rows exactly once")
    return split


def guided_random_split(dm, frac: float = 0.2, seed: int = 0) -> SplitResult:
    """Hold out ``frac`` of the rows inside each anchor year.

    The per-year test count is round(frac * n_year) with round-half-to-even,
    drawn uniformly without replacement. Label values play no part in the
    draw.
    """
    if not 0.0 < frac < 1.0:
        raise ValueError(f"test fraction must be in (0, 1), got {frac}")
    years = dm.provenance["anchor_year"].to_numpy()
    rng = np.random.default_rng(seed)
    test_idx: list[np.ndarray] = []
    for year in np.unique(years):
        rows = np.nonzero(years == year)[0]
        if len(rows) < 2:
            raise ValueError(f"anchor year {year} has fewer than 2 rows")
        n_test = int(round(frac * len(rows)))
        picked = rng.choice(rows, size=n_test, replace=False)
        test_idx.append(picked)
    test = np.sort(np.concatenate(test_idx)) if test_idx else np.array([], dtype=int)
    mask = np.ones(len(years), dtype=bool)
    mask[test] = False
    split = SplitResult(np.nonzero(mask)[0], test, "guided_random", seed)
    return _check_cover(split, len(years))


def split_by_schools(dm, test_fraction_of_schools: float, seed: int = 0) -> SplitResult:
    """Partition whole schools: no school contributes rows to both sides."""
    if not 0.0 < test_fraction_of_schools < 1.0:
        raise ValueError("school fraction must be in (0, 1)")
    schools = dm.provenance["school_id"].to_numpy()
    unique_schools = np.sort(np.unique(schools))
    if len(unique_schools) < 2:
        raise ValueError("school split needs at least 2 distinct schools")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unique_schools))
    n_test = int(round(test_fraction_of_schools * len(unique_schools)))
    n_test = min(max(n_test, 1), len(unique_schools) - 1)
    test_schools = set(unique_schools[order[:n_test]].tolist())
    is_test = np.isin(schools, list(test_schools))
    split = SplitResult(
        np.nonzero(~is_test)[0], np.nonzero(is_test)[0], "by_schools", seed
    )
    return _check_cover(split, len(schools))


def split_by_years(dm, n_test_years: int) -> SplitResult:
    """Reserve the most recent anchor years for testing."""
    if n_test_years < 1:
        raise ValueError("n_test_years must be >= 1")
    years = dm.provenance["anchor_year"].to_numpy()
    distinct = np.sort(np.unique(years))
    if len(distinct) < n_test_years + 1:
        raise ValueError(
            f"need at least {n_test_years + 1} distinct anchor years, "
            f"have {len(distinct)}"
        )
    cutoff = distinct[-n_test_years]
    is_test = years >= cutoff
    split = SplitResult(
        np.nonzero(~is_test)[0], np.nonzero(is_test)[0], "by_years", None
    )
    return _check_cover(split, len(years))
