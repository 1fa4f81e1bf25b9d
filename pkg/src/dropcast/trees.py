"""Weight-aware tree learners built from scratch: a CART classification tree,
a bagged forest, a histogram gradient-boosted ensemble on log-odds, and a
soft-voting wrapper.  All learners emit class-1 probabilities and are
deterministic functions of (data, weights, config, seed).

Split rule everywhere: go left iff x[feature] <= threshold.  Ties in split
gain break toward the lowest feature index, then the lowest threshold.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a model file cannot be parsed or has the wrong version."""


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class TrainConfig:
    max_depth: int = 6
    min_samples_leaf: float = 1.0  # minimum total sample weight per leaf
    n_trees: int = 200
    learning_rate: float = 0.1
    n_bins: int = 64
    l2_lambda: float = 1.0
    feature_subsample: int | str | None = None  # None=all, "sqrt", or a count
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")


@dataclass
class TreeNode:
    """Internal node (feature, threshold, children) or leaf (value).

    Leaf value is a class-1 probability for CART/forest trees and an additive
    log-odds contribution for boosted trees.
    """

    feature: int = -1
    threshold: float = math.nan
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float = math.nan

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "value" in d:
            return cls(value=float(d["value"]))
        return cls(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


@dataclass
class TrainedModel:
    kind: str  # tree | forest | gbdt | ensemble
    feature_names: list[str]
    config: TrainConfig | None = None
    trees: list[TreeNode] = field(default_factory=list)
    base_score: float = 0.0  # gbdt initial log-odds
    members: list["TrainedModel"] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def _tree_apply(node: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X), dtype=float)
    stack = [(node, np.arange(len(X)))]
    while stack:
        nd, idx = stack.pop()
        if len(idx) == 0:
            continue
        if nd.is_leaf:
            out[idx] = nd.value
        else:
            go_left = X[idx, nd.feature] <= nd.threshold
            stack.append((nd.left, idx[go_left]))
            stack.append((nd.right, idx[~go_left]))
    return out


# --- CART ------------------------------------------------------------------


def _gini(w1: np.ndarray, w: np.ndarray) -> np.ndarray:
    p1 = w1 / w
    p0 = (w - w1) / w
    return 1.0 - p1 * p1 - p0 * p0


def _best_gini_split(X, y, w, rows, features, min_leaf_weight):
    """Best (gain, feature, threshold) over midpoint candidates, or None."""
    wr = w[rows]
    yr = y[rows]
    W = wr.sum()
    W1 = float((wr * yr).sum())
    parent = float(_gini(np.array(W1), np.array(W)))
    if parent <= 0.0:
        return None
    best_gain = 0.0
    best = None
    for f in features:
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        xs = vals[order]
        cw = np.cumsum(wr[order])
        cw1 = np.cumsum((wr * yr)[order])
        pos = np.nonzero(xs[:-1] < xs[1:])[0]
        if len(pos) == 0:
            continue
        WL = cw[pos]
        WL1 = cw1[pos]
        WR = W - WL
        WR1 = W1 - WL1
        valid = (WL >= min_leaf_weight) & (WR >= min_leaf_weight)
        if not valid.any():
            continue
        gain = parent - (WL * _gini(WL1, WL) + WR * _gini(WR1, WR)) / W
        gain[~valid] = -np.inf
        i = int(np.argmax(gain))  # first max: lowest threshold wins ties
        if gain[i] > best_gain:
            best_gain = float(gain[i])
            best = (best_gain, int(f), float((xs[pos[i]] + xs[pos[i] + 1]) / 2))
    return best


def _grow_cart(X, y, w, rows, depth, cfg, rng):
    wr = w[rows]
    value = float((wr * y[rows]).sum() / wr.sum())
    if depth >= cfg.max_depth:
        return TreeNode(value=value)
    d = X.shape[1]
    if cfg.feature_subsample is None:
        features = range(d)
    else:
        m = cfg.feature_subsample
        if m == "sqrt":
            m = max(1, int(math.sqrt(d)))
        m = min(int(m), d)
        features = np.sort(rng.choice(d, size=m, replace=False))
    best = _best_gini_split(X, y, w, rows, features, cfg.min_samples_leaf)
    if best is None:
        return TreeNode(value=value)
    _, f, thr = best
    go_left = X[rows, f] <= thr
    left = _grow_cart(X, y, w, rows[go_left], depth + 1, cfg, rng)
    right = _grow_cart(X, y, w, rows[~go_left], depth + 1, cfg, rng)
    return TreeNode(feature=f, threshold=thr, left=left, right=right)


def _check_training_inputs(X, y, sample_weights):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("training matrix must be 2-D with at least one column")
    if len(X) == 0:
        raise ValueError("training matrix is empty")
    if sample_weights is None:
        w = np.ones(len(y), dtype=float)
    else:
        w = np.asarray(sample_weights, dtype=float)
    if (w < 0).any():
        raise ValueError("sample weights must be non-negative")
    if w.sum() <= 0:
        raise ValueError("at least one sample weight must be positive")
    return X, y, w


def _default_names(d: int) -> list[str]:
    return [f"x{i}" for i in range(d)]


def train_decision_tree(X, y, sample_weights=None, cfg: TrainConfig | None = None,
                        feature_names=None) -> TrainedModel:
    """Greedy CART with weighted Gini splits; leaf = weighted class-1 share."""
    cfg = cfg or TrainConfig(max_depth=6)
    X, y, w = _check_training_inputs(X, y, sample_weights)
    rows = np.nonzero(w > 0)[0]
    root = _grow_cart(X, y, w, rows, 0, cfg, np.random.default_rng(cfg.seed))
    return TrainedModel(
        kind="tree",
        feature_names=list(feature_names) if feature_names else _default_names(X.shape[1]),
        config=cfg,
        trees=[root],
    )


def train_random_forest(X, y, sample_weights=None, cfg: TrainConfig | None = None,
                        feature_names=None) -> TrainedModel:
    """Bagged CART trees with per-split feature subsampling.

    Probability is the plain mean of member leaf probabilities.
    """
    cfg = cfg or TrainConfig(n_trees=100, feature_subsample="sqrt")
    X, y, w = _check_training_inputs(X, y, sample_weights)
    all_rows = np.nonzero(w > 0)[0]
    trees = []
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(children[t])
        if cfg.bootstrap:
            rows = all_rows[rng.integers(0, len(all_rows), size=len(all_rows))]
        else:
            rows = all_rows
        trees.append(_grow_cart(X, y, w, rows, 0, cfg, rng))
    return TrainedModel(
        kind="forest",
        feature_names=list(feature_names) if feature_names else _default_names(X.shape[1]),
        config=cfg,
        trees=trees,
    )


# --- histogram GBDT ----------------------------------------------------------


def _quantile_edges(x: np.ndarray, w: np.ndarray, n_bins: int) -> np.ndarray:
    """Weighted-quantile bin edges; splitting at edge e sends x <= e left."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cw = np.cumsum(w[order])
    total = cw[-1]
    targets = np.arange(1, n_bins) / n_bins * total
    pos = np.minimum(np.searchsorted(cw, targets, side="left"), len(xs) - 1)
    edges = np.unique(xs[pos])
    return edges[edges < xs[-1]]


def _bin_codes(x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # code b means edges[b-1] < x <= edges[b]; x <= edges[b] iff code <= b
    return np.searchsorted(edges, x, side="left").astype(np.int64)


def _grow_boost_tree(codes, edges, g, h, w, rows, depth, cfg):
    G = float(g[rows].sum())
    H = float(h[rows].sum())
    lam = cfg.l2_lambda
    leaf_value = -cfg.learning_rate * G / (H + lam) if (H + lam) > 0 else 0.0
    if depth >= cfg.max_depth or len(rows) < 2:
        return TreeNode(value=leaf_value)

    d = codes.shape[1]
    n_slots = max((len(e) for e in edges), default=0) + 1
    if n_slots <= 1:
        return TreeNode(value=leaf_value)
    offsets = np.arange(d, dtype=np.int64) * n_slots
    flat = (codes[rows] + offsets[None, :]).ravel()
    size = d * n_slots
    hist_g = np.bincount(flat, weights=np.repeat(g[rows], d), minlength=size).reshape(d, n_slots)
    hist_h = np.bincount(flat, weights=np.repeat(h[rows], d), minlength=size).reshape(d, n_slots)
    hist_w = np.bincount(flat, weights=np.repeat(w[rows], d), minlength=size).reshape(d, n_slots)

    W = float(w[rows].sum())
    parent_score = G * G / (H + lam)
    best_gain = 1e-12
    best = None
    for f in range(d):
        n_edges = len(edges[f])
        if n_edges == 0:
            continue
        GL = np.cumsum(hist_g[f])[:n_edges]
        HL = np.cumsum(hist_h[f])[:n_edges]
        WL = np.cumsum(hist_w[f])[:n_edges]
        GR = G - GL
        HR = H - HL
        WR = W - WL
        valid = (WL >= cfg.min_samples_leaf) & (WR >= cfg.min_samples_leaf)
        if not valid.any():
            continue
        gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent_score)
        gain[~valid] = -np.inf
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = float(gain[i])
            best = (f, i)
    if best is None:
        return TreeNode(value=leaf_value)
    f, b = best
    go_left = codes[rows, f] <= b
    left = _grow_boost_tree(codes, edges, g, h, w, rows[go_left], depth + 1, cfg)
    right = _grow_boost_tree(codes, edges, g, h, w, rows[~go_left], depth + 1, cfg)
    return TreeNode(feature=f, threshold=float(edges[f][b]), left=left, right=right)


def weighted_logloss(y, p, w) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-(w * (y * np.log(p) + (1 - y) * np.log(1 - p))).sum() / w.sum())


def train_gbdt(X, y, sample_weights=None, cfg: TrainConfig | None = None,
               feature_names=None, loss_trace: list | None = None) -> TrainedModel:
    """Second-order boosting on log-odds with quantile-histogram split search.

    Starts from the weighted base rate; each round fits a tree to gradients
    g = p - y and hessians h = p(1 - p), both sample-weight scaled, with leaf
    values -lr * G / (H + l2_lambda).  Pass ``loss_trace`` to record the
    weighted training logloss after every round.
    """
    cfg = cfg or TrainConfig()
    X, y, w = _check_training_inputs(X, y, sample_weights)
    rows = np.nonzero(w > 0)[0]
    Xa, ya, wa = X[rows], y[rows], w[rows]

    p0 = float(np.clip((wa * ya).sum() / wa.sum(), 1e-12, 1 - 1e-12))
    base = math.log(p0 / (1 - p0))

    d = X.shape[1]
    edges = [_quantile_edges(Xa[:, f], wa, cfg.n_bins) for f in range(d)]
    codes = np.column_stack([_bin_codes(Xa[:, f], edges[f]) for f in range(d)])

    margin = np.full(len(ya), base, dtype=float)
    trees: list[TreeNode] = []
    idx = np.arange(len(ya))
    if loss_trace is not None:
        loss_trace.append(weighted_logloss(ya, sigmoid(margin), wa))
    for _ in range(cfg.n_trees):
        p = sigmoid(margin)
        g = wa * (p - ya)
        h = wa * p * (1 - p)
        tree = _grow_boost_tree(codes, edges, g, h, wa, idx, 0, cfg)
        trees.append(tree)
        margin += _tree_apply(tree, Xa)
        if loss_trace is not None:
            loss_trace.append(weighted_logloss(ya, sigmoid(margin), wa))
    return TrainedModel(
        kind="gbdt",
        feature_names=list(feature_names) if feature_names else _default_names(d),
        config=cfg,
        trees=trees,
        base_score=base,
    )


def make_ensemble(models: list[TrainedModel], metadata: dict | None = None) -> TrainedModel:
    """Soft-voting wrapper around already-trained members."""
    if not models:
        raise ValueError("ensemble needs at least one member")
    names = models[0].feature_names
    for m in models[1:]:
        if m.feature_names != names:
            raise ValueError("ensemble members disagree on feature schema")
    return TrainedModel(
        kind="ensemble",
        feature_names=list(names),
        members=list(models),
        metadata=metadata or {},
    )


# --- inference ---------------------------------------------------------------


def _check_schema(model: TrainedModel, X: np.ndarray, feature_names=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"feature count mismatch: model has {model.n_features}, matrix has {X.shape[1]}"
        )
    if feature_names is not None and list(feature_names) != model.feature_names:
        raise ValueError("feature names do not match the model schema")
    return X


def margin(model: TrainedModel, X, feature_names=None) -> np.ndarray:
    """Additive output: probability for tree/forest, log-odds for gbdt,
    mean of member margins for a voting ensemble."""
    X = _check_schema(model, X, feature_names)
    if model.kind == "tree":
        return _tree_apply(model.trees[0], X)
    if model.kind == "forest":
        return np.mean([_tree_apply(t, X) for t in model.trees], axis=0)
    if model.kind == "gbdt":
        out = np.full(len(X), model.base_score, dtype=float)
        for t in model.trees:
            out += _tree_apply(t, X)
        return out
    if model.kind == "ensemble":
        return np.mean([margin(m, X) for m in model.members], axis=0)
    raise ValueError(f"unknown model kind {model.kind!r}")


def predict_proba(model: TrainedModel, X, feature_names=None) -> np.ndarray:
    """Class-1 (dropout) probability per row."""
    X = _check_schema(model, X, feature_names)
    if model.kind in ("tree", "forest"):
        return margin(model, X)
    if model.kind == "gbdt":
        return sigmoid(margin(model, X))
    if model.kind == "ensemble":
        return np.mean([predict_proba(m, X) for m in model.members], axis=0)
    raise ValueError(f"unknown model kind {model.kind!r}")


def soft_vote(models: list[TrainedModel], X) -> np.ndarray:
    """Arithmetic mean of member class-1 probabilities."""
    return predict_proba(make_ensemble(models), X)


# --- serialization -----------------------------------------------------------


def _model_payload(model: TrainedModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "feature_names": model.feature_names,
        "config": asdict(model.config) if model.config else None,
        "base_score": model.base_score,
        "trees": [t.to_dict() for t in model.trees],
        "members": [_model_payload(m) for m in model.members] or None,
        "metadata": model.metadata,
    }


def _model_from_payload(d: dict) -> TrainedModel:
    try:
        kind = d["kind"]
        names = list(d["feature_names"])
        cfg = TrainConfig(**d["config"]) if d.get("config") else None
        trees = [TreeNode.from_dict(t) for t in d.get("trees", [])]
        members = [_model_from_payload(m) for m in d.get("members") or []]
        return TrainedModel(
            kind=kind,
            feature_names=names,
            config=cfg,
            trees=trees,
            base_score=float(d.get("base_score", 0.0)),
            members=members,
            metadata=d.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed model payload: {e}") from e


def save(model: TrainedModel, path: str | Path) -> None:
    payload = _model_payload(model)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load(path: str | Path) -> TrainedModel:
    try:
        payload = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ModelFormatError(f"cannot parse model file {path}: {e}") from e
    if not isinstance(payload, dict):
        raise ModelFormatError("model file must hold a JSON object")
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {version!r} (expected {FORMAT_VERSION})"
        )
    return _model_from_payload(payload)
