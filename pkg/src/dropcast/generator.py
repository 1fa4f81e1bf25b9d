"""Synthetic cohort generation calibrated to published per-level dropout
rates, with a controllable logistic feature signal so learners and
explainers have known ground truth.

Every run is driven by one seeded generator consumed in a fixed order, so a
config + seed pair always produces a byte-identical cohort.  Dropout counts
per (level, year) cell are hit exactly up to rounding: the calibrated risk
probabilities act as weights in a without-replacement draw of the target
number of dropouts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import Cohort, FEATURE_COLUMNS, MAX_LEVEL, MIN_LEVEL
from .trees import sigmoid

PAPER_YEARS = list(range(2015, 2021))

# Dropout percent by level (rows 1..12) and start year 2015..2020.
PAPER_LEVEL_DROPOUT_PERCENT: dict[int, list[float]] = {
    1: [2.42, 2.93, 2.91, 3.08, 3.73, 5.87],
    2: [1.07, 1.07, 1.09, 1.12, 1.01, 1.45],
    3: [0.95, 1.11, 1.13, 1.08, 1.03, 1.95],
    4: [1.62, 1.43, 1.41, 1.13, 0.83, 1.01],
    5: [2.41, 2.45, 2.40, 1.75, 1.28, 1.55],
    6: [6.49, 6.28, 5.87, 3.68, 2.49, 2.24],
    7: [11.74, 13.52, 14.10, 13.88, 10.98, 15.32],
    8: [9.84, 11.46, 11.43, 10.51, 7.82, 11.11],
    9: [19.41, 18.96, 17.46, 16.10, 8.35, 14.01],
    10: [6.99, 8.23, 7.94, 7.41, 5.83, 6.37],
    11: [8.99, 8.47, 8.43, 7.67, 5.60, 6.28],
    12: [17.69, 17.49, 21.22, 20.32, 10.14, 11.10],
}

DEFAULT_FAILURE_RATE = {
    1: 0.05, 2: 0.05, 3: 0.06, 4: 0.06, 5: 0.08, 6: 0.10,
    7: 0.14, 8: 0.14, 9: 0.16, 10: 0.15, 11: 0.15, 12: 0.18,
}

# Missing-value shares of the published schema.
DEFAULT_MISSINGNESS = {
    "grade_avg": 0.0227,
    "days_missed_auth": 0.0168,
    "classes_missed_auth": 0.3038,
    "days_missed_unauth": 0.3038,
    "classes_missed_unauth": 0.3038,
    "sci_grade_avg": 0.0159,
    "lit_grade_avg": 0.0159,
    "gender": 0.0159,
    "nationality": 0.1784,
    "birthplace": 0.3692,
    "preschool_attended": 0.3581,
    "father_profession": 0.4708,
    "mother_profession": 0.6358,
    "school_age_years": 0.3948,
    "school_city": 0.2687,
}

DEFAULT_VOCAB_SIZES = {
    "birthplace": 400,
    "father_profession": 250,
    "mother_profession": 160,
    "school_city": 120,
    "province": 9,
}


def default_dropout_rate_table(years=None) -> dict[tuple[int, int], float]:
    """Published per-level rates as fractions, keyed by (level, start year).

    Years outside the published range reuse the nearest published column.
    """
    years = list(years) if years is not None else list(PAPER_YEARS)
    table = {}
    for level, percents in PAPER_LEVEL_DROPOUT_PERCENT.items():
        for year in years:
            col = min(max(year, PAPER_YEARS[0]), PAPER_YEARS[-1]) - PAPER_YEARS[0]
            table[(level, year)] = percents[col] / 100.0
    return table


@dataclass
class GeneratorConfig:
    n_students: int = 10_000
    years: list[int] = field(default_factory=lambda: list(PAPER_YEARS))
    level_year_dropout_rate: dict[tuple[int, int], float] | None = None
    level_failure_rate: dict[int, float] = field(
        default_factory=lambda: dict(DEFAULT_FAILURE_RATE)
    )
    missingness: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_MISSINGNESS)
    )
    signal_strength: float = 1.0
    shift_years: list[int] = field(default_factory=list)
    seed: int = 0
    # structural knobs
    students_per_school: int = 400
    class_size: int = 30
    shift_absence_multiplier: float = 2.5
    shift_intercept_sd: float = 0.3
    vocab_sizes: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_VOCAB_SIZES))

    def __post_init__(self):
        if self.level_year_dropout_rate is None:
            self.level_year_dropout_rate = default_dropout_rate_table(self.years)

    def validate(self) -> None:
        if self.n_students < 1:
            raise ValueError("n_students must be positive")
        if not self.years:
            raise ValueError("years must be non-empty")
        ys = sorted(self.years)
        if any(b - a != 1 for a, b in zip(ys, ys[1:])):
            raise ValueError("years must be contiguous")
        for table, what in [
            (self.level_year_dropout_rate, "dropout"),
            ({(k, None): v for k, v in self.level_failure_rate.items()}, "failure"),
            ({(k, None): v for k, v in self.missingness.items()}, "missingness"),
        ]:
            for key, rate in table.items():
                if not 0.0 <= rate <= 1.0:
                    raise ValueError(f"{what} rate out of [0,1] at {key}: {rate}")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be non-negative")
        for (level, year), d_rate in self.level_year_dropout_rate.items():
            f_rate = self.level_failure_rate.get(level, 0.0)
            if d_rate + f_rate > 1.0:
                raise ValueError(
                    f"infeasible rates at level {level}, year {year}: "
                    f"dropout {d_rate} + failure {f_rate} > 1"
                )

    def to_dict(self) -> dict:
        return {
            "n_students": self.n_students,
            "years": list(self.years),
            "level_year_dropout_rate": {
                f"{lvl}:{yr}": rate
                for (lvl, yr), rate in sorted(self.level_year_dropout_rate.items())
            },
            "level_failure_rate": {str(k): v for k, v in sorted(self.level_failure_rate.items())},
            "missingness": dict(sorted(self.missingness.items())),
            "signal_strength": self.signal_strength,
            "shift_years": sorted(self.shift_years),
            "seed": self.seed,
            "students_per_school": self.students_per_school,
            "class_size": self.class_size,
            "shift_absence_multiplier": self.shift_absence_multiplier,
            "shift_intercept_sd": self.shift_intercept_sd,
            "vocab_sizes": dict(sorted(self.vocab_sizes.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "level_year_dropout_rate" in d and d["level_year_dropout_rate"] is not None:
            parsed = {}
            for key, rate in d["level_year_dropout_rate"].items():
                lvl, yr = key.split(":")
                parsed[(int(lvl), int(yr))] = float(rate)
            d["level_year_dropout_rate"] = parsed
        if "level_failure_rate" in d:
            d["level_failure_rate"] = {int(k): float(v) for k, v in d["level_failure_rate"].items()}
        return cls(**d)


def solve_intercept(target_rate: float, risk_scores) -> float:
    """Bisection for b with mean(sigmoid(b + scores)) equal to the target.

    The map b -> mean probability is continuous and strictly increasing onto
    (0, 1), so the root is unique.
    """
    if not 0.0 < target_rate < 1.0:
        raise ValueError("target_rate must be strictly inside (0, 1)")
    s = np.asarray(risk_scores, dtype=float)
    if not np.isfinite(s).all():
        raise ValueError("risk scores must be finite")

    def mean_prob(b):
        return float(np.mean(sigmoid(b + s)))

    lo, hi = -40.0, 40.0
    while mean_prob(lo) > target_rate:
        lo *= 2
    while mean_prob(hi) < target_rate:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_prob(mid) < target_rate:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def _zipf_probs(size: int) -> np.ndarray:
    p = 1.0 / np.arange(1, size + 1)
    return p / p.sum()


def _clip_round(x, lo, hi):
    return np.clip(np.round(x), lo, hi)


def generate(config: GeneratorConfig) -> Cohort:
    """Simulate the cohort described by the config.

    Students enter at a (year, level) drawn uniformly, then advance, repeat,
    or drop out year by year; per-cell dropout counts match the configured
    rate table and statuses always form valid transitions.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_students
    years = sorted(config.years)

    n_schools = max(2, n // config.students_per_school)
    vocab = {**DEFAULT_VOCAB_SIZES, **config.vocab_sizes}

    # static school attributes
    school_province = rng.choice(vocab["province"], n_schools, p=_zipf_probs(vocab["province"]))
    school_city = rng.choice(vocab["school_city"], n_schools, p=_zipf_probs(vocab["school_city"]))
    school_age = rng.integers(2, 89, n_schools)
    school_boarding = (rng.random(n_schools) < 0.08).astype(float)
    school_internet = (rng.random(n_schools) < 0.6).astype(float)
    school_tayssir = (rng.random(n_schools) < 0.3).astype(float)
    school_shift_jitter = rng.normal(0.0, config.shift_intercept_sd, n_schools)

    # static student attributes
    entry_year = np.array(years)[rng.integers(0, len(years), n)]
    entry_level = rng.integers(MIN_LEVEL, MAX_LEVEL + 1, n)
    school = rng.integers(0, n_schools, n)
    gender = rng.integers(0, 2, n).astype(float)
    nationality = (rng.random(n) < 0.97).astype(float)
    aptitude = rng.normal(0.0, 1.0, n)
    absence_prop = rng.normal(0.0, 1.0, n)
    birthplace = rng.choice(vocab["birthplace"], n, p=_zipf_probs(vocab["birthplace"]))
    father_prof = rng.choice(vocab["father_profession"], n, p=_zipf_probs(vocab["father_profession"]))
    mother_prof = rng.choice(vocab["mother_profession"], n, p=_zipf_probs(vocab["mother_profession"]))
    disability = rng.choice(6, n, p=[0.95, 0.01, 0.01, 0.01, 0.01, 0.01])
    preschool = rng.choice(3, n, p=[0.5, 0.3, 0.2])
    cartable = (rng.random(n) < 0.15).astype(float)
    tayssir = (rng.random(n) < 0.25).astype(float)
    entry_offset = rng.choice(4, n, p=[0.7, 0.2, 0.07, 0.03])

    student_label = np.array([f"S{i:06d}" for i in range(n)])
    school_label = np.array([f"SCHOOL{i:04d}" for i in range(n_schools)])

    level = entry_level.copy()
    fail_count = np.zeros(n, dtype=int)
    age = entry_level + 5 + entry_offset
    gone = np.zeros(n, dtype=bool)

    blocks: list[pd.DataFrame] = []
    for year in years:
        active = ~gone & (entry_year <= year)
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            continue
        lvl = level[idx]
        sch = school[idx]

        # classroom assignment inside each (school, level) group
        frame = pd.DataFrame({"school": sch, "level": lvl})
        chunk = frame.groupby(["school", "level"], sort=False).cumcount() // config.class_size
        class_id = np.array(
            [f"C{s:04d}L{l:02d}Y{year}N{c}" for s, l, c in zip(sch, lvl, chunk)]
        )

        m = len(idx)
        grade = np.clip(
            rng.normal(12.0 + 3.2 * aptitude[idx] - 1.0 * fail_count[idx], 1.2), 0, 20
        )
        sci = np.clip(grade + rng.normal(0.0, 1.2, m), 0, 20)
        lit = np.clip(grade + rng.normal(0.0, 1.2, m), 0, 20)
        absence_latent = np.exp(rng.normal(1.1 + 0.9 * absence_prop[idx], 0.35))
        days_unauth = _clip_round(absence_latent, 0, 388)
        classes_unauth = _clip_round(absence_latent * 1.8 + rng.normal(0, 1.0, m), 0, 101)
        days_auth = _clip_round(np.exp(rng.normal(0.8, 0.7, m)), 0, 120)
        classes_auth = _clip_round(days_auth * 4 + rng.normal(0, 2.0, m), 0, 828)
        rank = (
            pd.Series(-grade).groupby(pd.Series(class_id)).rank(method="first").to_numpy()
        )
        rank = np.clip(rank, 0, 50)
        age_now = np.clip(age[idx], 6, 23).astype(float)

        # logistic risk signal; absences weigh more in shift years
        z_grade = (grade - 12.0) / 3.4
        z_abs = (np.log1p(days_unauth) - 1.4) / 0.9
        age_excess = np.clip(age[idx] - (lvl + 5), 0, None)
        abs_coef = 0.9 * (config.shift_absence_multiplier if year in config.shift_years else 1.0)
        score = config.signal_strength * (
            -1.6 * z_grade + abs_coef * z_abs + 0.6 * fail_count[idx] + 0.4 * age_excess
        )
        if year in config.shift_years:
            score = score + school_shift_jitter[sch]

        status = np.full(m, "success", dtype=object)
        for lv in np.unique(lvl):
            cell = np.nonzero(lvl == lv)[0]
            rate = config.level_year_dropout_rate.get((int(lv), year), 0.0)
            n_drop = min(int(round(rate * len(cell))), len(cell))
            if rate >= 1.0:
                n_drop = len(cell)
            if n_drop > 0:
                b = solve_intercept(min(max(rate, 1e-9), 1 - 1e-9), score[cell])
                p = sigmoid(b + score[cell])
                keys = rng.random(len(cell)) ** (1.0 / np.maximum(p, 1e-12))
                status[cell[np.argsort(keys, kind="stable")[-n_drop:]]] = "dropout"
            survivors = cell[status[cell] != "dropout"]
            f_rate = config.level_failure_rate.get(int(lv), 0.0)
            if len(survivors) and f_rate > 0:
                adj = min(f_rate / max(1.0 - rate, 1e-9), 1.0)
                flunk = survivors[rng.random(len(survivors)) < adj]
                status[flunk] = "failure"

        blocks.append(
            pd.DataFrame(
                {
                    "student_id": student_label[idx],
                    "year": year,
                    "level": lvl,
                    "school_id": school_label[sch],
                    "class_id": class_id,
                    "status": status,
                    "cartable_scholarship": cartable[idx],
                    "tayssir_scholarship": tayssir[idx],
                    "grade_avg": grade,
                    "days_missed_auth": days_auth,
                    "classes_missed_auth": classes_auth,
                    "days_missed_unauth": days_unauth,
                    "classes_missed_unauth": classes_unauth,
                    "years_failed_level": fail_count[idx].astype(float),
                    "class_rank": rank,
                    "sci_grade_avg": sci,
                    "lit_grade_avg": lit,
                    "gender": gender[idx],
                    "nationality": nationality[idx],
                    "birthplace": np.array([f"bp{v}" for v in birthplace[idx]], dtype=object),
                    "disability": np.array([f"dis{v}" for v in disability[idx]], dtype=object),
                    "preschool_attended": np.array([f"pre{v}" for v in preschool[idx]], dtype=object),
                    "father_profession": np.array([f"fp{v}" for v in father_prof[idx]], dtype=object),
                    "mother_profession": np.array([f"mp{v}" for v in mother_prof[idx]], dtype=object),
                    "age": age_now,
                    "school_age_years": school_age[sch].astype(float),
                    "province": np.array([f"prov{v}" for v in school_province[sch]], dtype=object),
                    "boarding_school": school_boarding[sch],
                    "internet_access": school_internet[sch],
                    "school_city": np.array([f"city{v}" for v in school_city[sch]], dtype=object),
                    "school_tayssir": school_tayssir[sch],
                }
            )
        )

        dropped = idx[status == "dropout"]
        gone[dropped] = True
        failed = idx[status == "failure"]
        fail_count[failed] = np.minimum(fail_count[failed] + 1, 3)
        promoted = idx[status == "success"]
        graduating = promoted[level[promoted] == MAX_LEVEL]
        gone[graduating] = True
        level[promoted] = np.minimum(level[promoted] + 1, MAX_LEVEL)
        fail_count[promoted] = 0
        age[idx] += 1

    table = pd.concat(blocks, ignore_index=True)

    # exact-count missingness per feature
    total = len(table)
    for feature in FEATURE_COLUMNS:
        rate = config.missingness.get(feature, 0.0)
        k = int(round(rate * total))
        if k <= 0:
            continue
        positions = rng.choice(total, size=k, replace=False)
        if table[feature].dtype == object:
            col = table[feature].to_numpy(dtype=object, copy=True)
            col[positions] = np.nan
            table[feature] = col
        else:
            col = table[feature].to_numpy(dtype=float, copy=True)
            col[positions] = np.nan
            table[feature] = col

    return Cohort(table)
