"""Exact Shapley attributions for tree models against a background sample.

For every (explained row, background row) pair the model output is treated as
a game over features: a coalition takes its values from the explained row and
the rest from the background row.  Within one tree each leaf contributes a
unanimity-style term whose Shapley weights have closed forms, so attributions
are exact and sum to the model margin minus the background mean (local
accuracy).  Ensembles combine per-tree attributions the same way their
predictions combine: summed for boosted trees, averaged for forests and
voting ensembles.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .trees import TrainedModel, TreeNode, margin, _check_schema


@dataclass
class ShapVector:
    phi: np.ndarray
    base_value: float
    output_scale: str  # probability | log-odds | mixed
    feature_names: list[str]


@dataclass
class ImportanceRanking:
    """Features ordered by mean absolute attribution, largest first."""

    entries: list[tuple[str, float]]
    k: int

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]


def _leaf_paths(tree: TreeNode):
    """Yield (leaf_value, features, lo, hi) per reachable leaf.

    Each distinct feature on the path collapses to one interval (lo, hi]:
    a row passes the leaf's constraints on that feature iff lo < v <= hi.
    """
    out = []

    def walk(node, bounds):
        if node.is_leaf:
            feats = sorted(bounds)
            lo = np.array([bounds[f][0] for f in feats])
            hi = np.array([bounds[f][1] for f in feats])
            if np.all(lo < hi):  # contradictory paths are unreachable
                out.append((node.value, np.array(feats, dtype=int), lo, hi))
            return
        f, t = node.feature, node.threshold
        lo, hi = bounds.get(f, (-math.inf, math.inf))
        if lo < min(hi, t):
            walk(node.left, {**bounds, f: (lo, min(hi, t))})
        if max(lo, t) < hi:
            walk(node.right, {**bounds, f: (max(lo, t), hi)})

    walk(tree, {})
    return out


def _shapley_weight_tables(max_slots: int):
    """W1[a,b] = (a-1)! b! / (a+b)!  and  W2[a,b] = a! (b-1)! / (a+b)!.

    Computed from exact integer binomials so the 1e-9 oracle tolerance holds.
    """
    n = max_slots + 1
    W1 = np.zeros((n, n))
    W2 = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if a >= 1:
                W1[a, b] = 1.0 / (a * math.comb(a + b, a))
            if b >= 1:
                W2[a, b] = 1.0 / (b * math.comb(a + b, b))
    return W1, W2


def _accumulate_tree_phi(tree: TreeNode, rows: np.ndarray, background: np.ndarray,
                         phi: np.ndarray) -> None:
    """Add this tree's summed-over-background attributions into ``phi``."""
    paths = _leaf_paths(tree)
    if not paths:
        return
    max_slots = max(len(p[1]) for p in paths)
    if max_slots == 0:
        return
    W1, W2 = _shapley_weight_tables(max_slots)
    for value, feats, lo, hi in paths:
        if len(feats) == 0:
            continue
        xv = rows[:, feats]
        zv = background[:, feats]
        x_ok = (xv > lo) & (xv <= hi)  # (R, s)
        z_ok = (zv > lo) & (zv <= hi)  # (B, s)
        xf = x_ok.astype(float)
        zf = z_ok.astype(float)
        a = (xf @ (1.0 - zf).T).astype(int)  # (R, B) count of x-only slots
        b = ((1.0 - xf) @ zf.T).astype(int)  # count of z-only slots
        alive = ((1.0 - xf) @ (1.0 - zf).T) < 0.5  # no slot fails both rows
        wu = np.where(alive, W1[a, b], 0.0)
        wv = np.where(alive, W2[a, b], 0.0)
        for s_idx, f in enumerate(feats):
            in_u = x_ok[:, s_idx][:, None] & ~z_ok[None, :, s_idx]
            in_v = ~x_ok[:, s_idx][:, None] & z_ok[None, :, s_idx]
            phi[:, f] += value * np.sum(wu * in_u, axis=1)
            phi[:, f] -= value * np.sum(wv * in_v, axis=1)


def _model_scale(model: TrainedModel) -> str:
    if model.kind in ("tree", "forest"):
        return "probability"
    if model.kind == "gbdt":
        return "log-odds"
    scales = {_model_scale(m) for m in model.members}
    return scales.pop() if len(scales) == 1 else "mixed"


def _phi_batch(model: TrainedModel, rows: np.ndarray, background: np.ndarray) -> np.ndarray:
    phi = np.zeros((len(rows), model.n_features))
    if model.kind == "tree":
        _accumulate_tree_phi(model.trees[0], rows, background, phi)
    elif model.kind == "forest":
        for t in model.trees:
            _accumulate_tree_phi(t, rows, background, phi)
        phi /= len(model.trees)
    elif model.kind == "gbdt":
        for t in model.trees:
            _accumulate_tree_phi(t, rows, background, phi)
    elif model.kind == "ensemble":
        for m in model.members:
            phi += _phi_batch(m, rows, background)
        phi /= len(model.members)
    else:
        raise ValueError(f"unknown model kind {model.kind!r}")
    return phi


def tree_shap_batch(model: TrainedModel, rows, background) -> tuple[np.ndarray, float]:
    """Attributions for many rows at once; returns (phi matrix, base value)."""
    rows = _check_schema(model, rows)
    background = _check_schema(model, background)
    if len(background) == 0:
        raise ValueError("background rows must be non-empty")
    phi = _phi_batch(model, rows, background) / len(background)
    base = float(np.mean(margin(model, background)))
    return phi, base


def tree_shap(model: TrainedModel, row, background_rows) -> ShapVector:
    """Exact interventional Shapley attribution of one row.

    ``base_value + phi.sum()`` equals the model margin of the row: a
    probability for single trees and forests, log-odds for boosted models.
    """
    phi, base = tree_shap_batch(model, np.atleast_2d(row), background_rows)
    return ShapVector(
        phi=phi[0],
        base_value=base,
        output_scale=_model_scale(model),
        feature_names=list(model.feature_names),
    )


def global_importance(model: TrainedModel, rows, background, k: int = 8) -> ImportanceRanking:
    """Rank features by mean |phi| over the explained rows; top-k returned.

    Ties break by feature name so the ranking is reproducible.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if len(rows) == 0:
        raise ValueError("need at least one row to rank importances")
    if k > model.n_features:
        warnings.warn(
            f"k={k} exceeds feature count {model.n_features}; clamping", stacklevel=2
        )
        k = model.n_features
    phi, _ = tree_shap_batch(model, rows, background)
    magnitude = np.mean(np.abs(phi), axis=0)
    ranked = sorted(
        zip(model.feature_names, magnitude.tolist()), key=lambda t: (-t[1], t[0])
    )
    return ImportanceRanking(entries=ranked[:k], k=k)
