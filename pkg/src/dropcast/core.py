"""Domain model: education levels, academic years, student statuses, labels,
experiment keys, and the cohort container every other module consumes.

A cohort is a multi-year table of student-year records plus one status
outcome per record.  Statuses describe what the recorded year led to:
``success`` (promoted next year), ``failure`` (repeats the level), or
``dropout`` (discontinues; no later records exist).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import pandas as pd

MIN_LEVEL = 1
MAX_LEVEL = 12

#: Columns every cohort table carries ahead of the feature columns.
ID_COLUMNS = ["student_id", "year", "level", "school_id", "class_id", "status"]


class Cycle(str, enum.Enum):
    PRIMARY = "primary"
    MIDDLE_SCHOOL = "middle_school"
    HIGH_SCHOOL = "high_school"


class StudentStatus(str, enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    DROPOUT = "dropout"


class Label(enum.IntEnum):
    """Binary target. Dropout is the positive class (1) everywhere."""

    CONTINUE = 0
    DROPOUT = 1


class Excluded:
    """Marker for student-anchors whose follow-up window is incomplete."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Excluded"


EXCLUDED = Excluded()


def check_level(level: int) -> int:
    level = int(level)
    if not MIN_LEVEL <= level <= MAX_LEVEL:
        raise ValueError(f"level must be in {MIN_LEVEL}..{MAX_LEVEL}, got {level}")
    return level


def cycle_of_level(level: int) -> Cycle:
    level = check_level(level)
    if level <= 6:
        return Cycle.PRIMARY
    if level <= 9:
        return Cycle.MIDDLE_SCHOOL
    return Cycle.HIGH_SCHOOL


def check_year(year: int) -> int:
    year = int(year)
    if year < 1900:
        raise ValueError(f"academic start year must be >= 1900, got {year}")
    return year


@dataclass(frozen=True)
class ModelKey:
    """Identifies one prediction task: train on ``history_years`` of data for
    students at ``level``, predict dropout within the next ``horizon_years``."""

    history_years: int
    horizon_years: int
    level: int

    def __post_init__(self):
        if self.history_years < 1:
            raise ValueError("history_years must be >= 1")
        if self.horizon_years < 1:
            raise ValueError("horizon_years must be >= 1")
        check_level(self.level)

    @classmethod
    def parse(cls, text: str) -> "ModelKey":
        """Parse 'i,j,k' (history,horizon,level)."""
        parts = [p.strip() for p in str(text).split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected 'history,horizon,level', got {text!r}")
        return cls(int(parts[0]), int(parts[1]), int(parts[2]))

    def slug(self) -> str:
        return f"hist{self.history_years}_next{self.horizon_years}_lvl{self.level}"


# Dataset schema: feature name -> (kind, low, high). Ranges apply when the
# value is present; missing values stay explicit (NaN / empty CSV cell).
FEATURE_SPECS: dict[str, tuple[str, float, float]] = {
    # academic
    "cartable_scholarship": ("binary", 0, 1),
    "tayssir_scholarship": ("binary", 0, 1),
    "grade_avg": ("numeric", 0, 20),
    "days_missed_auth": ("numeric", 0, 120),
    "classes_missed_auth": ("numeric", 0, 828),
    "days_missed_unauth": ("numeric", 0, 388),
    "classes_missed_unauth": ("numeric", 0, 101),
    "years_failed_level": ("numeric", 0, 3),
    "class_rank": ("numeric", 0, 50),
    # grades
    "sci_grade_avg": ("numeric", 0, 20),
    "lit_grade_avg": ("numeric", 0, 20),
    # demographic
    "gender": ("binary", 0, 1),
    "nationality": ("binary", 0, 1),
    "birthplace": ("categorical", 0, 0),
    "disability": ("categorical", 0, 0),
    "preschool_attended": ("categorical", 0, 0),
    "father_profession": ("categorical", 0, 0),
    "mother_profession": ("categorical", 0, 0),
    "age": ("numeric", 6, 23),
    # school
    "school_age_years": ("numeric", 2, 88),
    "province": ("categorical", 0, 0),
    "boarding_school": ("binary", 0, 1),
    "internet_access": ("binary", 0, 1),
    "school_city": ("categorical", 0, 0),
    "school_tayssir": ("binary", 0, 1),
}

FEATURE_COLUMNS = list(FEATURE_SPECS)
CATEGORICAL_FEATURES = {n for n, (k, _, _) in FEATURE_SPECS.items() if k == "categorical"}


@dataclass
class StudentYearRecord:
    """One student's row for one academic year."""

    student_id: str
    year: int
    level: int
    school_id: str
    class_id: str
    features: dict = field(default_factory=dict)


def derive_label(status: StudentStatus) -> Label:
    """Binary label of a single status. Failure keeps the student enrolled,
    so it maps to Continue."""
    if status == StudentStatus.DROPOUT:
        return Label.DROPOUT
    return Label.CONTINUE


@dataclass(frozen=True)
class TransitionViolation:
    student_id: str
    year: int
    kind: str
    detail: str


class Cohort:
    """Columnar container for student-year records and their outcomes.

    Backed by a pandas DataFrame with ``ID_COLUMNS`` plus feature columns.
    Each (student_id, year) appears at most once; the ``status`` column is the
    outcome of that year.
    """

    def __init__(self, data: pd.DataFrame):
        missing = [c for c in ID_COLUMNS if c not in data.columns]
        if missing:
            raise ValueError(f"cohort table missing columns: {missing}")
        if data.duplicated(subset=["student_id", "year"]).any():
            raise ValueError("duplicate (student_id, year) rows in cohort")
        bad_status = set(data["status"].unique()) - {s.value for s in StudentStatus}
        if bad_status:
            raise ValueError(f"unknown status values: {sorted(bad_status)}")
        df = data.reset_index(drop=True).copy()
        df["year"] = df["year"].astype(int)
        df["level"] = df["level"].astype(int)
        if (df["level"] < MIN_LEVEL).any() or (df["level"] > MAX_LEVEL).any():
            raise ValueError("level out of range in cohort table")
        self.data = df
        self._status_by_key = None

    @property
    def feature_columns(self) -> list[str]:
        return [c for c in self.data.columns if c not in ID_COLUMNS]

    def years(self) -> list[int]:
        return sorted(self.data["year"].unique().tolist())

    def __len__(self) -> int:
        return len(self.data)

    def _status_map(self) -> Mapping[tuple[str, int], str]:
        if self._status_by_key is None:
            self._status_by_key = {
                (s, int(y)): st
                for s, y, st in zip(
                    self.data["student_id"], self.data["year"], self.data["status"]
                )
            }
        return self._status_by_key

    def outcome(self, student_id: str, year: int) -> StudentStatus | None:
        st = self._status_map().get((student_id, int(year)))
        return StudentStatus(st) if st is not None else None

    def records(self) -> Iterator[StudentYearRecord]:
        feats = self.feature_columns
        for row in self.data.itertuples(index=False):
            d = row._asdict()
            yield StudentYearRecord(
                student_id=d["student_id"],
                year=int(d["year"]),
                level=int(d["level"]),
                school_id=d["school_id"],
                class_id=d["class_id"],
                features={f: d[f] for f in feats},
            )

    # --- CSV interface -----------------------------------------------------

    def to_csv(self, path: str | Path) -> None:
        cols = ID_COLUMNS + self.feature_columns
        self.data[cols].to_csv(path, index=False, encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path) -> "Cohort":
        df = pd.read_csv(
            path,
            dtype={
                "student_id": str,
                "school_id": str,
                "class_id": str,
                "status": str,
            },
            encoding="utf-8",
        )
        for col in CATEGORICAL_FEATURES:
            if col in df.columns:
                df[col] = df[col].astype(object)
                df.loc[df[col].isna(), col] = np.nan
        return cls(df)


def horizon_label(
    cohort: Cohort, student_id: str, anchor_year: int, j: int
) -> Label | Excluded:
    """Label for a student anchored at ``anchor_year`` over the next ``j`` years.

    Dropout if any of years anchor+1..anchor+j has a dropout outcome, Continue
    if all of them are observed without one, Excluded when the window is cut
    short before a dropout is seen.
    """
    if j < 1:
        raise ValueError("horizon j must be >= 1")
    if cohort.outcome(student_id, anchor_year) is None:
        raise KeyError(f"no record for student {student_id!r} at {anchor_year}")
    for offset in range(1, j + 1):
        status = cohort.outcome(student_id, anchor_year + offset)
        if status is None:
            return EXCLUDED
        if status == StudentStatus.DROPOUT:
            return Label.DROPOUT
    return Label.CONTINUE


def horizon_labels_frame(cohort: Cohort, j: int) -> pd.DataFrame:
    """Vectorized horizon labels for every record.

    Returns a frame with student_id, year and an integer ``label`` column:
    0 Continue, 1 Dropout, -1 Excluded.
    """
    if j < 1:
        raise ValueError("horizon j must be >= 1")
    df = cohort.data[["student_id", "year", "status"]]
    base = df.set_index(["student_id", "year"])["status"]
    idx = pd.MultiIndex.from_arrays([df["student_id"], df["year"]])
    labels = np.zeros(len(df), dtype=int)
    decided = np.zeros(len(df), dtype=bool)
    for offset in range(1, j + 1):
        shifted = pd.MultiIndex.from_arrays([df["student_id"], df["year"] + offset])
        status = base.reindex(shifted).to_numpy()
        is_drop = status == StudentStatus.DROPOUT.value
        is_missing = pd.isna(status)
        labels[~decided & is_drop] = 1
        decided |= is_drop
        labels[~decided & is_missing] = -1
        decided |= is_missing
    out = pd.DataFrame(
        {"student_id": df["student_id"], "year": df["year"], "label": labels}
    )
    out.index = idx
    return out


def validate_transitions(cohort: Cohort) -> list[TransitionViolation]:
    """Check level progressions and dropout absorption across record pairs.

    Flags consecutive records where the level neither repeats (failure) nor
    increments by one (success), records that follow a dropout, and
    status/level disagreements between adjacent years.
    """
    violations: list[TransitionViolation] = []
    df = cohort.data[["student_id", "year", "level", "status"]].sort_values(
        ["student_id", "year"], kind="stable"
    )
    sid = df["student_id"].to_numpy()
    year = df["year"].to_numpy()
    level = df["level"].to_numpy()
    status = df["status"].to_numpy()

    same_student = sid[1:] == sid[:-1]
    for i in np.nonzero(same_student)[0]:
        prev_status = status[i]
        step = level[i + 1] - level[i]
        if prev_status == StudentStatus.DROPOUT.value:
            violations.append(
                TransitionViolation(
                    sid[i], int(year[i + 1]), "after_dropout",
                    f"record at {year[i + 1]} follows dropout at {year[i]}",
                )
            )
            continue
        if step not in (0, 1):
            violations.append(
                TransitionViolation(
                    sid[i], int(year[i + 1]), "level_skip",
                    f"level {level[i]} -> {level[i + 1]}",
                )
            )
            continue
        if year[i + 1] == year[i] + 1:
            expected = 1 if prev_status == StudentStatus.SUCCESS.value else 0
            if step != expected:
                violations.append(
                    TransitionViolation(
                        sid[i], int(year[i + 1]), "status_mismatch",
                        f"status {prev_status} at {year[i]} but level step {step}",
                    )
                )
    return violations
