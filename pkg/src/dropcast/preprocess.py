"""Cleaning and feature engineering: imputation with missing indicators,
categorical encoding (one-hot below a cardinality cap, frequency above it),
global or within-group z-scoring, and classroom/school aggregate features.

Aggregates that reference outcomes (dropout and failure counts) always come
from the prior year; same-year outcome counts would leak the label being
predicted.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .core import Cohort, StudentStatus

#: Engineered group columns appended by ``modeling_frame``.
AGGREGATE_COLUMNS = [
    "class_size",
    "class_female_count",
    "class_grade_mean",
    "class_prior_failures",
    "class_prior_dropouts",
    "school_prior_failures",
    "school_prior_dropouts",
]

NORMALIZE_MODES = ("none", "global_zscore", "group_zscore")


@dataclass
class PreprocessPlan:
    impute_numeric: str = "median"  # median | constant:<value>
    impute_categorical: str = "mode"
    one_hot_max_cardinality: int = 16
    normalize: str = "none"
    group_key: str = "class_id"
    add_missing_indicators: bool = True
    categorical: list[str] | None = None  # None: infer from object dtype

    def __post_init__(self):
        if self.normalize not in NORMALIZE_MODES:
            raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")

    def to_dict(self) -> dict:
        return {
            "impute_numeric": self.impute_numeric,
            "impute_categorical": self.impute_categorical,
            "one_hot_max_cardinality": self.one_hot_max_cardinality,
            "normalize": self.normalize,
            "group_key": self.group_key,
            "add_missing_indicators": self.add_missing_indicators,
            "categorical": self.categorical,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessPlan":
        return cls(**d)


def _constant_value(policy: str) -> float | None:
    if policy.startswith("constant:"):
        return float(policy.split(":", 1)[1])
    return None


class FittedPreprocessor:
    """Frozen imputation/encoding/normalization state plus the output schema.

    ``transform`` is a pure function of this state and the given rows; the
    output column order is fixed at fit time and recorded in
    ``feature_names``.
    """

    def __init__(self, plan, features, categorical, numeric_stats, categorical_stats):
        self.plan = plan
        self.features = list(features)
        self.categorical = set(categorical)
        self.numeric_stats = numeric_stats
        self.categorical_stats = categorical_stats
        self.feature_names = self._output_names()

    def _output_names(self) -> list[str]:
        names = []
        for f in self.features:
            if f in self.categorical:
                st = self.categorical_stats[f]
                if st["onehot"] is not None:
                    names.extend(f"{f}={c}" for c in st["onehot"])
                else:
                    names.append(f"{f}__freq")
            else:
                names.append(f)
        if self.plan.add_missing_indicators:
            names.extend(f"{f}__missing" for f in self.features)
        return names

    def transform(self, frame: pd.DataFrame) -> np.ndarray:
        unknown = [f for f in self.features if f not in frame.columns]
        if unknown:
            raise KeyError(f"rows are missing expected features: {unknown}")
        n = len(frame)
        blocks: list[np.ndarray] = []
        indicators: list[np.ndarray] = []
        group = None
        if self.plan.normalize == "group_zscore":
            if self.plan.group_key not in frame.columns:
                raise KeyError(f"group key column {self.plan.group_key!r} not present")
            group = frame[self.plan.group_key].to_numpy()
        for f in self.features:
            col = frame[f]
            if f in self.categorical:
                miss = col.isna().to_numpy()
                st = self.categorical_stats[f]
                filled = col.to_numpy(dtype=object, copy=True)
                filled[miss] = st["mode"]
                if st["onehot"] is not None:
                    for c in st["onehot"]:
                        blocks.append((filled == c).astype(float))
                else:
                    freq = st["freq"]
                    blocks.append(
                        np.array([freq.get(v, 0.0) for v in filled], dtype=float)
                    )
            else:
                vals = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
                miss = np.isnan(vals)
                st = self.numeric_stats[f]
                vals = np.where(miss, st["fill"], vals)
                if self.plan.normalize == "global_zscore":
                    vals = (vals - st["mean"]) / st["std"]
                elif self.plan.normalize == "group_zscore":
                    vals = _group_zscore(vals, group)
                blocks.append(vals)
            indicators.append(miss.astype(float))
        if self.plan.add_missing_indicators:
            blocks.extend(indicators)
        out = np.column_stack(blocks) if blocks else np.zeros((n, 0))
        assert out.shape == (n, len(self.feature_names))
        return out

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "features": self.features,
            "categorical": sorted(self.categorical),
            "numeric_stats": self.numeric_stats,
            "categorical_stats": {
                f: {
                    "mode": st["mode"],
                    "onehot": st["onehot"],
                    "freq": st["freq"],
                }
                for f, st in self.categorical_stats.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedPreprocessor":
        return cls(
            plan=PreprocessPlan.from_dict(d["plan"]),
            features=d["features"],
            categorical=d["categorical"],
            numeric_stats=d["numeric_stats"],
            categorical_stats=d["categorical_stats"],
        )


def _group_zscore(vals: np.ndarray, group: np.ndarray) -> np.ndarray:
    out = np.empty_like(vals)
    frame = pd.DataFrame({"v": vals, "g": group})
    grouped = frame.groupby("g", sort=False)["v"]
    mean = grouped.transform("mean").to_numpy()
    std = grouped.transform(lambda s: s.std(ddof=0)).to_numpy()
    std = np.where(np.isnan(std) | (std < 1e-12), 1.0, std)
    out[:] = (vals - mean) / std
    return out


def fit(plan: PreprocessPlan, frame: pd.DataFrame,
        features: Sequence[str] | None = None) -> FittedPreprocessor:
    """Learn imputation values, encodings, and scaling from training rows.

    Statistics ignore missing values; a feature with no observed training
    value at all is an error.
    """
    if len(frame) == 0:
        raise ValueError("cannot fit a preprocessor on zero rows")
    if features is None:
        features = [c for c in frame.columns]
    features = list(features)
    if plan.categorical is not None:
        categorical = set(plan.categorical) & set(features)
    else:
        categorical = {f for f in features if frame[f].dtype == object}

    numeric_stats: dict[str, dict] = {}
    categorical_stats: dict[str, dict] = {}
    for f in features:
        col = frame[f]
        if f in categorical:
            observed = col.dropna()
            if observed.empty:
                raise ValueError(f"feature {f!r} has no observed training values")
            counts = observed.value_counts()
            top = counts.max()
            mode = sorted(str(v) for v, c in counts.items() if c == top)[0]
            if plan.impute_categorical.startswith("constant:"):
                mode = plan.impute_categorical.split(":", 1)[1]
            if counts.size <= plan.one_hot_max_cardinality:
                onehot = sorted(str(v) for v in counts.index)
                freq = None
            else:
                onehot = None
                total = int(counts.sum())
                freq = {str(v): c / total for v, c in counts.items()}
            categorical_stats[f] = {"mode": mode, "onehot": onehot, "freq": freq}
        else:
            vals = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
            observed = vals[~np.isnan(vals)]
            if observed.size == 0:
                raise ValueError(f"feature {f!r} has no observed training values")
            const = _constant_value(plan.impute_numeric)
            fill = const if const is not None else float(np.median(observed))
            std = float(observed.std())
            numeric_stats[f] = {
                "fill": fill,
                "mean": float(observed.mean()),
                "std": std if std > 1e-12 else 1.0,
            }
    return FittedPreprocessor(plan, features, categorical, numeric_stats, categorical_stats)


# --- group aggregates --------------------------------------------------------


@dataclass
class GroupAggregates:
    class_table: pd.DataFrame  # indexed by class_id
    school_table: pd.DataFrame  # indexed by school_id


def aggregate_group_features(cohort: Cohort, year: int) -> GroupAggregates:
    """Classroom and school aggregates for one year.

    Size, female count, and mean grade come from the year's own rows.
    Dropout and failure counts come from the prior year, scoped to the
    class's (school, level) group and to the whole school; when the prior
    year is absent those columns are missing (NaN), never zero.
    """
    df = cohort.data
    current = df[df["year"] == year]
    if current.empty:
        raise ValueError(f"cohort has no records for year {year}")
    prior = df[df["year"] == year - 1]

    grouped = current.groupby("class_id", sort=True)
    class_table = pd.DataFrame(
        {
            "class_size": grouped.size(),
            "class_female_count": grouped["gender"].apply(
                lambda s: float((s == 1).sum())
            ),
            "class_grade_mean": grouped["grade_avg"].mean(),
        }
    )
    meta = grouped[["school_id", "level"]].first()

    if prior.empty:
        class_table["class_prior_failures"] = np.nan
        class_table["class_prior_dropouts"] = np.nan
        school_ids = sorted(current["school_id"].unique())
        school_table = pd.DataFrame(
            {
                "school_prior_failures": np.nan,
                "school_prior_dropouts": np.nan,
            },
            index=pd.Index(school_ids, name="school_id"),
        )
        return GroupAggregates(class_table, school_table)

    prior_group = prior.groupby(["school_id", "level"])["status"]
    prior_fail = prior_group.apply(lambda s: float((s == StudentStatus.FAILURE.value).sum()))
    prior_drop = prior_group.apply(lambda s: float((s == StudentStatus.DROPOUT.value).sum()))
    keys = pd.MultiIndex.from_arrays([meta["school_id"], meta["level"]])
    class_table["class_prior_failures"] = prior_fail.reindex(keys).fillna(0.0).to_numpy()
    class_table["class_prior_dropouts"] = prior_drop.reindex(keys).fillna(0.0).to_numpy()

    prior_school = prior.groupby("school_id")["status"]
    school_fail = prior_school.apply(lambda s: float((s == StudentStatus.FAILURE.value).sum()))
    school_drop = prior_school.apply(lambda s: float((s == StudentStatus.DROPOUT.value).sum()))
    school_ids = pd.Index(sorted(current["school_id"].unique()), name="school_id")
    school_table = pd.DataFrame(
        {
            "school_prior_failures": school_fail.reindex(school_ids).fillna(0.0),
            "school_prior_dropouts": school_drop.reindex(school_ids).fillna(0.0),
        }
    )
    return GroupAggregates(class_table, school_table)


def modeling_frame(cohort: Cohort) -> pd.DataFrame:
    """All records with group aggregates merged in, ready for fitting.

    Adds the ``AGGREGATE_COLUMNS`` per record; the record's own level stays
    available as a numeric feature.
    """
    parts = []
    for year in cohort.years():
        agg = aggregate_group_features(cohort, year)
        rows = cohort.data[cohort.data["year"] == year].copy()
        rows = rows.join(agg.class_table, on="class_id")
        rows = rows.join(agg.school_table, on="school_id")
        parts.append(rows)
    out = pd.concat(parts, ignore_index=True)
    return out.sort_values(["year", "student_id"], kind="stable").reset_index(drop=True)


def modeling_feature_columns(cohort: Cohort) -> list[str]:
    """Feature set used for design matrices: level, raw features, aggregates."""
    return ["level"] + cohort.feature_columns + AGGREGATE_COLUMNS
