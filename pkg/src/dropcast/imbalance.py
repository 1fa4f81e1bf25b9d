"""Imbalance treatments applied to training rows: inverse-frequency class
weights, random undersampling of the majority class, and minority
oversampling by segment interpolation between nearest neighbours (SMOTE).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TREATMENTS = ["baseline", "class_weights", "undersample", "smote"]


@dataclass(frozen=True)
class ClassWeights:
    weight_continue: float
    weight_dropout: float

    def __post_init__(self):
        if self.weight_continue <= 0 or self.weight_dropout <= 0:
            raise ValueError("class weights must be positive")

    def per_sample(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=int)
        return np.where(y == 1, self.weight_dropout, self.weight_continue)


@dataclass
class ResampleResult:
    X: np.ndarray
    y: np.ndarray
    origin: np.ndarray  # per-row tag: original | retained | synthetic


def balanced_class_weights(y) -> ClassWeights:
    """w_c = N / (2 * N_c): each class carries half the total weight mass."""
    y = np.asarray(y, dtype=int)
    n = len(y)
    n_drop = int(np.sum(y == 1))
    n_cont = n - n_drop
    if n_drop == 0 or n_cont == 0:
        raise ValueError("both classes must be present to balance weights")
    return ClassWeights(weight_continue=n / (2 * n_cont), weight_dropout=n / (2 * n_drop))


def undersample(X, y, seed: int = 0) -> ResampleResult:
    """Downsample the majority class uniformly to the minority count.

    Every output row is an original row; minority rows are all kept.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    idx_drop = np.nonzero(y == 1)[0]
    idx_cont = np.nonzero(y == 0)[0]
    if len(idx_drop) == 0 or len(idx_cont) == 0:
        raise ValueError("both classes must be present")
    if len(idx_drop) <= len(idx_cont):
        minority, majority = idx_drop, idx_cont
    else:
        minority, majority = idx_cont, idx_drop
    rng = np.random.default_rng(seed)
    kept = rng.choice(majority, size=len(minority), replace=False)
    rows = np.sort(np.concatenate([minority, kept]))
    origin = np.where(np.isin(rows, minority), "original", "retained")
    return ResampleResult(X=X[rows], y=y[rows], origin=origin.astype(object))


def smote(X, y, k: int = 5, seed: int = 0) -> ResampleResult:
    """Oversample the minority class up to the majority count.

    Each synthetic row is x_a + lam * (x_b - x_a) with lam ~ U[0, 1] and x_b
    drawn from the k nearest minority neighbours of x_a (Euclidean distance
    in the preprocessed feature space, exact brute-force search).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    idx_drop = np.nonzero(y == 1)[0]
    idx_cont = np.nonzero(y == 0)[0]
    if len(idx_drop) == 0 or len(idx_cont) == 0:
        raise ValueError("both classes must be present")
    if len(idx_drop) <= len(idx_cont):
        minority, majority = idx_drop, idx_cont
    else:
        minority, majority = idx_cont, idx_drop
    n_min = len(minority)
    if n_min < 2:
        raise ValueError("SMOTE needs at least 2 minority rows")
    k = min(k, n_min - 1)

    M = X[minority]
    # pairwise squared distances, self excluded
    sq = np.sum(M * M, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (M @ M.T)
    np.fill_diagonal(d2, np.inf)
    neighbours = np.argsort(d2, axis=1, kind="stable")[:, :k]

    n_syn = len(majority) - n_min
    rng = np.random.default_rng(seed)
    base = rng.integers(0, n_min, size=n_syn)
    pick = rng.integers(0, k, size=n_syn)
    lam = rng.random(n_syn)
    a = M[base]
    b = M[neighbours[base, pick]]
    synthetic = a + lam[:, None] * (b - a)

    minority_label = int(y[minority[0]])
    X_out = np.concatenate([X, synthetic], axis=0)
    y_out = np.concatenate([y, np.full(n_syn, minority_label, dtype=int)])
    origin = np.concatenate(
        [np.full(len(y), "original", dtype=object), np.full(n_syn, "synthetic", dtype=object)]
    )
    return ResampleResult(X=X_out, y=y_out, origin=origin)
