"""Class-aware evaluation: confusion counts, per-class precision/recall,
macro-F1, rank-based AUC, and the probability-threshold prediction corrector.

All rates are exact rational functions of the confusion counts; the corrector
keeps a predicted dropout only when its probability meets the threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

DEFAULT_THRESHOLD_GRID = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with dropout (class 1) as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class EvalReport:
    accuracy: float
    recall_continue: float
    precision_continue: float
    recall_dropout: float
    precision_dropout: float
    f1_continue: float
    f1_dropout: float
    macro_f1: float
    specificity: float
    confusion: ConfusionMatrix
    auc: float | None = None
    threshold: float | None = None
    zero_division_fields: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = asdict(self.confusion)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["confusion"] = ConfusionMatrix(**d["confusion"])
        return cls(**d)


def confusion(labels, predicted) -> ConfusionMatrix:
    """Exact confusion counts from true and predicted binary labels."""
    y = np.asarray(labels, dtype=int)
    p = np.asarray(predicted, dtype=int)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {p.shape}")
    if y.size == 0:
        raise ValueError("cannot build a confusion matrix from empty input")
    return ConfusionMatrix(
        tp=int(np.sum((y == 1) & (p == 1))),
        tn=int(np.sum((y == 0) & (p == 0))),
        fp=int(np.sum((y == 0) & (p == 1))),
        fn=int(np.sum((y == 1) & (p == 0))),
    )


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix) -> EvalReport:
    """Derive every report rate from the confusion counts.

    Per-class precision/recall treat each class as positive in turn; the
    F1 column is the unweighted mean of the two per-class F1 scores.
    Zero-denominator cells report 0.0 and are listed in
    ``zero_division_fields``.
    """
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    flags: list[str] = []
    accuracy = (cm.tp + cm.tn) / cm.total
    recall_dropout = _ratio(cm.tp, cm.tp + cm.fn, "recall_dropout", flags)
    precision_dropout = _ratio(cm.tp, cm.tp + cm.fp, "precision_dropout", flags)
    recall_continue = _ratio(cm.tn, cm.tn + cm.fp, "recall_continue", flags)
    precision_continue = _ratio(cm.tn, cm.tn + cm.fn, "precision_continue", flags)
    specificity = recall_continue

    def f1(p, r, name):
        if p + r == 0:
            flags.append(name)
            return 0.0
        return 2 * p * r / (p + r)

    f1_dropout = f1(precision_dropout, recall_dropout, "f1_dropout")
    f1_continue = f1(precision_continue, recall_continue, "f1_continue")
    return EvalReport(
        accuracy=accuracy,
        recall_continue=recall_continue,
        precision_continue=precision_continue,
        recall_dropout=recall_dropout,
        precision_dropout=precision_dropout,
        f1_continue=f1_continue,
        f1_dropout=f1_dropout,
        macro_f1=(f1_continue + f1_dropout) / 2,
        specificity=specificity,
        confusion=cm,
    )


def macro_f1_from_rates(
    recall_continue: float,
    precision_continue: float,
    recall_dropout: float,
    precision_dropout: float,
) -> float:
    """Macro-F1 recomputed from already-rounded per-class rates."""
    f1c = 2 * precision_continue * recall_continue / (precision_continue + recall_continue)
    f1d = 2 * precision_dropout * recall_dropout / (precision_dropout + recall_dropout)
    return (f1c + f1d) / 2


def roc_auc(labels, scores) -> float:
    """Rank-based AUC (Mann-Whitney) with mid-ranks for tied scores.

    Equals the trapezoidal area under the empirical ROC curve and the
    concordant-pair fraction with ties counted half.
    """
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    if y.shape != s.shape:
        raise ValueError("labels and scores must have equal length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both classes present")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=float)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1  # mid-rank, 1-based
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[y == 1]))
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


@dataclass
class CorrectorConfig:
    """Threshold settings for the prediction corrector."""

    threshold: float = 0.5
    grid: list[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLD_GRID))

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if any(t < 0.0 or t > 1.0 for t in self.grid):
            raise ValueError("grid thresholds must be in [0, 1]")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be strictly increasing")


def apply_corrector(probs, cfg: CorrectorConfig | float) -> np.ndarray:
    """Keep a dropout flag only when its probability meets the threshold.

    Returns an int label vector: 1 where p >= threshold, else 0.  At 0.5 this
    coincides with the plain argmax prediction (ties go to dropout).
    """
    threshold = cfg.threshold if isinstance(cfg, CorrectorConfig) else float(cfg)
    p = np.asarray(probs, dtype=float)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return (p >= threshold).astype(int)


def threshold_sweep(probs, labels, grid=None) -> list[EvalReport]:
    """One report per threshold, in grid order.

    The flagged set shrinks (by inclusion) as the threshold rises, so dropout
    recall is non-increasing along the sweep.
    """
    if grid is None:
        grid = list(DEFAULT_THRESHOLD_GRID)
    grid = list(grid)
    if not grid:
        raise ValueError("threshold grid must be non-empty")
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=int)
    try:
        auc = roc_auc(y, p)
    except ValueError:
        auc = None
    reports = []
    for t in grid:
        predicted = apply_corrector(p, t)
        rep = metrics(confusion(y, predicted))
        rep.threshold = float(t)
        rep.auc = auc
        reports.append(rep)
    return reports
