"""Design-matrix assembly: concatenate a student's history years, attach the
horizon label, and keep per-row provenance for deployment-shaped splits.

A row exists for every (student, anchor year) where the student sits at the
key's level, has records for every history year, and has a decidable label
within the horizon window.  Each history year keeps its own copy of every
feature, suffixed @0 (anchor), @-1, @-2, ..., including that year's level.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .core import Cohort, Cycle, ModelKey, cycle_of_level, horizon_labels_frame
from .preprocess import FittedPreprocessor, modeling_frame

PROVENANCE_COLUMNS = ["student_id", "anchor_year", "school_id"]


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    provenance: pd.DataFrame  # student_id, anchor_year, school_id per row
    feature_names: list[str]
    key: ModelKey | None = None

    def __post_init__(self):
        if not (len(self.X) == len(self.y) == len(self.provenance)):
            raise ValueError("matrix, labels, and provenance row counts differ")
        if self.X.shape[1] != len(self.feature_names):
            raise ValueError("column count does not match feature names")
        if np.isnan(self.X).any():
            raise ValueError("design matrix contains missing values")

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def subset(self, rows) -> "DesignMatrix":
        rows = np.asarray(rows, dtype=int)
        return DesignMatrix(
            X=self.X[rows],
            y=self.y[rows],
            provenance=self.provenance.iloc[rows].reset_index(drop=True),
            feature_names=list(self.feature_names),
            key=self.key,
        )

    def to_csv(self, path: str | Path) -> None:
        out = self.provenance.copy()
        for i, name in enumerate(self.feature_names):
            out[name] = self.X[:, i]
        out["label"] = self.y
        out.to_csv(path, index=False, encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path, key: ModelKey | None = None) -> "DesignMatrix":
        df = pd.read_csv(path, dtype={"student_id": str, "school_id": str}, encoding="utf-8")
        missing = [c for c in PROVENANCE_COLUMNS + ["label"] if c not in df.columns]
        if missing:
            raise ValueError(f"matrix file lacks required columns: {missing}")
        feature_names = [c for c in df.columns if c not in PROVENANCE_COLUMNS + ["label"]]
        return cls(
            X=df[feature_names].to_numpy(dtype=float),
            y=df["label"].to_numpy(dtype=int),
            provenance=df[PROVENANCE_COLUMNS].copy(),
            feature_names=feature_names,
            key=key,
        )


def build(cohort: Cohort, key: ModelKey, preprocessor: FittedPreprocessor) -> DesignMatrix:
    """Assemble the matrix for one (history, horizon, level) key.

    History features of year t-o get suffix @-o; students lacking any history
    year are skipped rather than padded, and undecidable horizon windows drop
    the row entirely.
    """
    if "level" not in preprocessor.features:
        raise ValueError("preprocessor must include 'level' among its features")
    i, j, k = key.history_years, key.horizon_years, key.level
    df = cohort.data
    at_level = df[df["level"] == k]
    if at_level.empty:
        raise ValueError(f"no eligible rows: cohort has no records at level {k}")

    labels = horizon_labels_frame(cohort, j)
    record_index = labels.index  # MultiIndex of every (student, year) on file
    anchors = at_level[["student_id", "year", "school_id"]].copy()

    ok = np.ones(len(anchors), dtype=bool)
    for o in range(1, i):
        idx_o = pd.MultiIndex.from_arrays([anchors["student_id"], anchors["year"] - o])
        ok &= idx_o.isin(record_index)
    anchors = anchors[ok]
    if anchors.empty:
        raise ValueError(
            f"no eligible rows: no student at level {k} has {i} consecutive history years"
        )

    anchor_idx = pd.MultiIndex.from_arrays([anchors["student_id"], anchors["year"]])
    lbl = labels["label"].loc[anchor_idx].to_numpy()
    anchors = anchors[lbl >= 0]
    y = lbl[lbl >= 0]
    if anchors.empty:
        raise ValueError(
            f"no eligible rows: every level-{k} anchor has an incomplete "
            f"{j}-year follow-up window"
        )

    order = np.lexsort((anchors["student_id"].to_numpy(), anchors["year"].to_numpy()))
    anchors = anchors.iloc[order].reset_index(drop=True)
    y = y[order]

    mf = modeling_frame(cohort)
    anchor_years = anchors["year"].to_numpy()
    needed = sorted({int(t) - o for t in np.unique(anchor_years) for o in range(i)})
    transformed: dict[int, np.ndarray] = {}
    row_of: dict[int, dict[str, int]] = {}
    for yr in needed:
        sub = mf[mf["year"] == yr]
        transformed[yr] = preprocessor.transform(sub)
        row_of[yr] = {s: p for p, s in enumerate(sub["student_id"])}

    width = len(preprocessor.feature_names)
    students = anchors["student_id"].to_numpy()
    blocks = []
    for o in range(i):
        block = np.empty((len(anchors), width))
        for t in np.unique(anchor_years):
            mask = anchor_years == t
            lookup = row_of[int(t) - o]
            rows = np.array([lookup[s] for s in students[mask]], dtype=int)
            block[mask] = transformed[int(t) - o][rows]
        blocks.append(block)
    X = np.hstack(blocks)
    feature_names = [
        f"{name}@{-o}" for o in range(i) for name in preprocessor.feature_names
    ]
    provenance = pd.DataFrame(
        {
            "student_id": anchors["student_id"].to_numpy(),
            "anchor_year": anchors["year"].to_numpy(),
            "school_id": anchors["school_id"].to_numpy(),
        }
    )
    return DesignMatrix(X=X, y=y.astype(int), provenance=provenance,
                        feature_names=feature_names, key=key)


def dropout_rate_table(cohort: Cohort, group_by: str = "level") -> pd.DataFrame:
    """Dropout percent (2 decimals) per level or cycle, by academic year.

    Rate is dropouts over enrolled within the group and year; combinations
    with no enrolled students stay empty rather than zero.  The cycle table
    gets an extra overall row across all levels.
    """
    if group_by not in ("level", "cycle"):
        raise ValueError("group_by must be 'level' or 'cycle'")
    df = cohort.data
    if group_by == "level":
        groups = df["level"]
        index = sorted(df["level"].unique().tolist())
    else:
        groups = df["level"].map(lambda lv: cycle_of_level(lv).value)
        index = [c.value for c in Cycle if (groups == c.value).any()]
    years = sorted(df["year"].unique().tolist())
    table = pd.DataFrame(index=index, columns=years, dtype=float)
    is_drop = (df["status"] == "dropout").to_numpy()
    for g in index:
        in_group = (groups == g).to_numpy()
        for yr in years:
            mask = in_group & (df["year"] == yr).to_numpy()
            n = int(mask.sum())
            if n > 0:
                table.loc[g, yr] = round(100.0 * is_drop[mask].sum() / n, 2)
    if group_by == "cycle":
        overall = []
        for yr in years:
            mask = (df["year"] == yr).to_numpy()
            n = int(mask.sum())
            overall.append(round(100.0 * is_drop[mask].sum() / n, 2) if n else np.nan)
        table.loc["overall"] = overall
    table.index.name = group_by
    return table
