"""Config-driven experiment runner: generates or loads a cohort, builds one
design matrix per model key, applies the configured split, trains every
treatment x learner cell, evaluates with the prediction corrector and its
threshold sweep, and writes comparison tables, series files, rate tables,
and feature-importance rankings under one artifact directory.

Everything derives from the global seed, so rerunning a config reproduces
the artifact tree byte for byte.  Cells run independently; a failing cell
leaves an error note and the rest proceed.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluate, imbalance, report, splits, trees
from .core import Cohort, ModelKey
from .evaluate import CorrectorConfig
from .explain import global_importance, tree_shap_batch
from .generator import GeneratorConfig, generate
from .matrix import DesignMatrix, build, dropout_rate_table
from .preprocess import PreprocessPlan, fit, modeling_feature_columns, modeling_frame

log = logging.getLogger("dropcast")

LEARNER_NAMES = ["tree", "forest", "gbdt", "ensemble"]

DEFAULT_LEARNER_CONFIGS: dict[str, dict] = {
    "tree": {"max_depth": 8, "min_samples_leaf": 20.0, "n_trees": 1},
    "forest": {"n_trees": 100, "max_depth": 10, "min_samples_leaf": 5.0,
               "feature_subsample": "sqrt"},
    "gbdt": {"n_trees": 200, "max_depth": 6, "learning_rate": 0.1, "n_bins": 64,
             "l2_lambda": 1.0, "min_samples_leaf": 1.0},
}
DEFAULT_ENSEMBLE_MEMBERS = ["tree", "forest", "gbdt"]

OUTPUT_ROOT_ENV = "DROPCAST_OUT"


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out/run"
    cohort: dict = field(default_factory=dict)  # {"generator": {...}} or {"csv": path}
    preprocess: dict = field(default_factory=dict)
    model_keys: list[ModelKey] = field(default_factory=list)
    split: dict = field(default_factory=lambda: {"strategy": "guided_random",
                                                 "test_fraction": 0.2})
    treatments: list[str] = field(default_factory=lambda: list(imbalance.TREATMENTS))
    learners: dict = field(default_factory=dict)
    corrector: CorrectorConfig = field(default_factory=CorrectorConfig)
    explain: dict = field(default_factory=dict)
    series: dict = field(default_factory=lambda: {"treatment": "class_weights",
                                                  "learner": "gbdt"})
    figures: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        keys = [ModelKey(*map(int, k)) for k in d.get("model_keys", [])]
        corrector = CorrectorConfig(**d.get("corrector", {}))
        return cls(
            seed=int(d.get("seed", 0)),
            output_dir=d.get("output_dir", "out/run"),
            cohort=d.get("cohort", {}),
            preprocess=d.get("preprocess", {}),
            model_keys=keys,
            split=d.get("split", {"strategy": "guided_random", "test_fraction": 0.2}),
            treatments=d.get("treatments", list(imbalance.TREATMENTS)),
            learners=d.get("learners", {}),
            corrector=corrector,
            explain=d.get("explain", {}),
            series=d.get("series", {"treatment": "class_weights", "learner": "gbdt"}),
            figures=bool(d.get("figures", True)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def validate(self) -> None:
        if not self.model_keys:
            raise ValueError("config needs at least one model key")
        if not self.treatments:
            raise ValueError("config needs at least one imbalance treatment")
        unknown = set(self.treatments) - set(imbalance.TREATMENTS)
        if unknown:
            raise ValueError(f"unknown treatments: {sorted(unknown)}")
        if "csv" in self.cohort:
            p = Path(self.cohort["csv"])
            if not p.exists():
                raise FileNotFoundError(f"cohort csv not found: {p}")

    def raw_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "cohort": self.cohort,
            "preprocess": self.preprocess,
            "model_keys": [
                [k.history_years, k.horizon_years, k.level] for k in self.model_keys
            ],
            "split": self.split,
            "treatments": self.treatments,
            "learners": self.learners,
            "corrector": {"threshold": self.corrector.threshold,
                          "grid": self.corrector.grid},
            "explain": self.explain,
            "series": self.series,
            "figures": self.figures,
        }


def resolve_output_dir(path: str | Path) -> Path:
    path = Path(path)
    if path.is_absolute():
        return path
    return Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / path


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _json_dump(payload, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_cohort(config: ExperimentConfig) -> Cohort:
    if "csv" in config.cohort:
        return Cohort.from_csv(config.cohort["csv"])
    gen_dict = dict(config.cohort.get("generator", {}))
    gen_dict.setdefault("seed", config.seed)
    return generate(GeneratorConfig.from_dict(gen_dict))


def make_split(dm: DesignMatrix, spec: dict, seed: int) -> splits.SplitResult:
    strategy = spec.get("strategy", "guided_random")
    if strategy == "guided_random":
        return splits.guided_random_split(dm, spec.get("test_fraction", 0.2), seed)
    if strategy == "by_schools":
        return splits.split_by_schools(dm, spec.get("test_fraction_of_schools", 0.3), seed)
    if strategy == "by_years":
        return splits.split_by_years(dm, spec.get("n_test_years", 1))
    raise ValueError(f"unknown split strategy {strategy!r}")


def _learner_config(config: ExperimentConfig, learner: str, seed: int) -> trees.TrainConfig:
    base = dict(DEFAULT_LEARNER_CONFIGS.get(learner, {}))
    override = {k: v for k, v in config.learners.get(learner, {}).items()
                if k != "members"}
    base.update(override)
    base["seed"] = seed
    return trees.TrainConfig(**base)


def apply_treatment(treatment: str, X, y, seed: int):
    """Training-rows-only imbalance handling. Returns (X, y, weights)."""
    if treatment == "baseline":
        return X, y, None
    if treatment == "class_weights":
        return X, y, imbalance.balanced_class_weights(y).per_sample(y)
    if treatment == "undersample":
        res = imbalance.undersample(X, y, seed)
        return res.X, res.y, None
    if treatment == "smote":
        res = imbalance.smote(X, y, seed=seed)
        return res.X, res.y, None
    raise ValueError(f"unknown treatment {treatment!r}")


def train_learner(learner: str, X, y, weights, cfg: trees.TrainConfig,
                  feature_names, members: dict | None = None) -> trees.TrainedModel:
    if learner == "tree":
        return trees.train_decision_tree(X, y, weights, cfg, feature_names)
    if learner == "forest":
        return trees.train_random_forest(X, y, weights, cfg, feature_names)
    if learner == "gbdt":
        return trees.train_gbdt(X, y, weights, cfg, feature_names)
    if learner == "ensemble":
        if not members:
            raise ValueError("ensemble requires previously trained members")
        return trees.make_ensemble(list(members.values()))
    raise ValueError(f"unknown learner {learner!r}")


def evaluate_cell(model: trees.TrainedModel, X_test, y_test,
                  corrector: CorrectorConfig):
    probs = trees.predict_proba(model, X_test)
    predicted = evaluate.apply_corrector(probs, corrector.threshold)
    rep = evaluate.metrics(evaluate.confusion(y_test, predicted))
    rep.threshold = corrector.threshold
    try:
        rep.auc = evaluate.roc_auc(y_test, probs)
    except ValueError:
        rep.auc = None
    sweep = evaluate.threshold_sweep(probs, y_test, corrector.grid)
    return rep, sweep, probs


def _run_treatment_unit(args: dict) -> dict:
    """One (key, treatment) unit: trains every learner, writes its cells.

    Top-level function so process pools can pickle it.
    """
    out_dir = Path(args["out_dir"])
    X_train, y_train = args["X_train"], args["y_train"]
    X_test, y_test = args["X_test"], args["y_test"]
    treatment = args["treatment"]
    corrector = CorrectorConfig(**args["corrector"])
    feature_names = args["feature_names"]
    results = {}
    try:
        Xt, yt, wt = apply_treatment(treatment, X_train, y_train, args["treatment_seed"])
    except Exception as e:  # noqa: BLE001 - cell isolation by design
        for learner in args["learners"]:
            _note_cell_error(out_dir / learner, f"treatment failed: {e}")
        return {"treatment": treatment, "cells": {}, "error": str(e)}

    members: dict[str, trees.TrainedModel] = {}
    for learner in args["learners"]:
        cell_dir = out_dir / learner
        cell_dir.mkdir(parents=True, exist_ok=True)
        try:
            cfg = trees.TrainConfig(**args["learner_configs"][learner]) \
                if learner != "ensemble" else None
            if learner == "ensemble":
                wanted = args["ensemble_members"]
                model = trees.make_ensemble([members[m] for m in wanted if m in members])
            else:
                model = train_learner(learner, Xt, yt, wt, cfg, feature_names)
                members[learner] = model
            model.metadata = {
                "key": args["key_slug"],
                "treatment": treatment,
                "learner": learner,
                "seed": args["treatment_seed"],
                "split": args["split_meta"],
            }
            rep, sweep, _ = evaluate_cell(model, X_test, y_test, corrector)
            rep.metadata = dict(model.metadata)
            rep.metadata["config"] = args["learner_configs"].get(learner)

            trees.save(model, cell_dir / "model.json")
            _json_dump(rep.to_dict(), cell_dir / "report.json")
            report.sweep_frame(sweep).to_csv(cell_dir / "sweep.csv", index=False)
            (cell_dir / "sweep.md").write_text(report.sweep_markdown(sweep))
            results[learner] = {
                "report": rep.to_dict(),
                "sweep": [s.to_dict() for s in sweep],
            }
        except Exception as e:  # noqa: BLE001 - cell isolation by design
            _note_cell_error(cell_dir, str(e))
    return {"treatment": treatment, "cells": results}


def _note_cell_error(cell_dir: Path, message: str) -> None:
    cell_dir.mkdir(parents=True, exist_ok=True)
    (cell_dir / "error.txt").write_text(message + "\n")
    log.warning("cell %s failed: %s", cell_dir, message)


def run(config: ExperimentConfig, out_dir: str | Path | None = None,
        jobs: int = 1) -> Path:
    """Execute the full experiment grid; returns the artifact directory."""
    config.validate()
    out = resolve_output_dir(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    cohort = load_cohort(config)
    cohort.to_csv(out / "cohort.csv")

    for group_by in ("level", "cycle"):
        table = dropout_rate_table(cohort, group_by)
        table.to_csv(out / f"dropout_rates_{group_by}.csv")
        if config.figures:
            report.save_rates_figure(
                out / f"dropout_rates_{group_by}.svg", table,
                f"Dropout rate by {group_by}",
            )

    plan = PreprocessPlan(**config.preprocess)
    mf = modeling_frame(cohort)
    features = modeling_feature_columns(cohort)

    learner_names = [n for n in LEARNER_NAMES
                     if n in (list(config.learners) or LEARNER_NAMES)]
    if not learner_names:
        learner_names = list(LEARNER_NAMES)
    ensemble_members = config.learners.get("ensemble", {}).get(
        "members", DEFAULT_ENSEMBLE_MEMBERS
    )

    all_results: dict[str, dict] = {}
    units = []
    for ki, key in enumerate(config.model_keys):
        key_dir = out / "cells" / key.slug()
        key_dir.mkdir(parents=True, exist_ok=True)
        fp = fit(plan, mf, features)
        _json_dump(fp.to_dict(), key_dir / "preprocessor.json")
        dm = build(cohort, key, fp)
        split = make_split(dm, config.split, _derive_seed(config.seed, ki))
        split.to_json(key_dir / "split.json")
        train = dm.subset(split.train_rows)
        test = dm.subset(split.test_rows)
        split_meta = {"strategy": split.strategy, "seed": split.seed,
                      "n_train": len(split.train_rows), "n_test": len(split.test_rows)}
        for ti, treatment in enumerate(config.treatments):
            units.append(
                {
                    "out_dir": str(key_dir / treatment),
                    "key_slug": key.slug(),
                    "treatment": treatment,
                    "treatment_seed": _derive_seed(config.seed, ki, ti),
                    "X_train": train.X, "y_train": train.y,
                    "X_test": test.X, "y_test": test.y,
                    "feature_names": dm.feature_names,
                    "learners": learner_names,
                    "learner_configs": {
                        name: vars(_learner_config(config, name, _derive_seed(config.seed, ki, ti, li)))
                        for li, name in enumerate(learner_names) if name != "ensemble"
                    },
                    "ensemble_members": ensemble_members,
                    "corrector": {"threshold": config.corrector.threshold,
                                  "grid": config.corrector.grid},
                    "split_meta": split_meta,
                }
            )

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_treatment_unit, units))
    else:
        outcomes = [_run_treatment_unit(u) for u in units]
    for unit, outcome in zip(units, outcomes):
        all_results[unit["out_dir"]] = outcome

    # comparison tables per key (treatment x learner, fixed presentation order)
    for key in config.model_keys:
        key_dir = out / "cells" / key.slug()
        cells = []
        for treatment in config.treatments:
            unit_key = str(key_dir / treatment)
            outcome = all_results.get(unit_key, {})
            for learner in learner_names:
                cell = outcome.get("cells", {}).get(learner)
                if cell:
                    cells.append(
                        (treatment, learner, evaluate.EvalReport.from_dict(cell["report"]))
                    )
        if cells:
            report.comparison_frame(cells).to_csv(key_dir / "comparison.csv", index=False)
            (key_dir / "comparison.md").write_text(report.comparison_markdown(cells))

    _write_series(config, out, all_results, learner_names)
    _write_explanations(config, out, cohort, mf, features, plan)
    _write_manifest(config, out)
    return out


def _series_points(config, out, all_results, axis: str):
    """Collect (group, x, report) points for horizon or history series."""
    sel_treatment = config.series.get("treatment", "class_weights")
    sel_learner = config.series.get("learner", "gbdt")
    if sel_treatment not in config.treatments:
        sel_treatment = config.treatments[0]
    groups: dict[tuple, list] = {}
    for key in config.model_keys:
        if axis == "horizon":
            group = (key.history_years, key.level)
            x = key.horizon_years
        else:
            group = (key.horizon_years, key.level)
            x = key.history_years
        unit_key = str(out / "cells" / key.slug() / sel_treatment)
        cell = all_results.get(unit_key, {}).get("cells", {}).get(sel_learner)
        if cell:
            groups.setdefault(group, []).append(
                (x, evaluate.EvalReport.from_dict(cell["report"]))
            )
    return groups, sel_treatment, sel_learner


def _write_series(config, out, all_results, learner_names) -> None:
    series_dir = out / "series"
    for axis in ("horizon", "history"):
        groups, treatment, learner = _series_points(config, out, all_results, axis)
        for group, points in sorted(groups.items()):
            if len(points) < 2:
                continue
            points.sort(key=lambda t: t[0])
            series_dir.mkdir(parents=True, exist_ok=True)
            xs = [p[0] for p in points]
            reps = [p[1] for p in points]
            frame = report.sweep_frame(reps)
            frame.insert(0, axis, xs)
            frame = frame.drop(columns=["threshold"])
            if axis == "horizon":
                name = f"horizon_hist{group[0]}_lvl{group[1]}"
                xlabel = "prediction horizon (years ahead)"
            else:
                name = f"history_next{group[0]}_lvl{group[1]}"
                xlabel = "history length (years used)"
            frame.to_csv(series_dir / f"{name}.csv", index=False)
            if config.figures:
                report.save_series_figure(
                    series_dir / f"{name}.svg",
                    xs,
                    {
                        "recall (dropout)": [r.recall_dropout for r in reps],
                        "precision (dropout)": [r.precision_dropout for r in reps],
                        "macro F1": [r.macro_f1 for r in reps],
                        "AUC": [r.auc if r.auc is not None else float("nan") for r in reps],
                    },
                    xlabel,
                    f"{learner} / {treatment}",
                )


def _write_explanations(config, out, cohort, mf, features, plan) -> None:
    spec = dict(config.explain)
    if spec.get("enabled", True) is False:
        return
    key = ModelKey(*spec["key"]) if "key" in spec else config.model_keys[0]
    treatment = spec.get("treatment", "class_weights")
    if treatment not in config.treatments:
        treatment = config.treatments[0]
    learner = spec.get("learner", "gbdt")
    cell_dir = out / "cells" / key.slug() / treatment / learner
    model_path = cell_dir / "model.json"
    if not model_path.exists():
        log.warning("explain target %s missing; skipping explanations", model_path)
        return
    model = trees.load(model_path)
    fp_payload = json.loads((out / "cells" / key.slug() / "preprocessor.json").read_text())
    from .preprocess import FittedPreprocessor

    fp = FittedPreprocessor.from_dict(fp_payload)
    dm = build(cohort, key, fp)
    split = splits.SplitResult.from_json(out / "cells" / key.slug() / "split.json")
    train = dm.subset(split.train_rows)
    test = dm.subset(split.test_rows)

    rng = np.random.default_rng(_derive_seed(config.seed, 9999))
    bg_size = min(int(spec.get("background_size", 256)), len(train.X))
    background = train.X[rng.choice(len(train.X), bg_size, replace=False)]
    n_rows = min(int(spec.get("n_rows", 100)), len(test.X))
    rows = test.X[:n_rows]

    explain_dir = out / "explain"
    explain_dir.mkdir(parents=True, exist_ok=True)
    phi, base = tree_shap_batch(model, rows, background)
    import pandas as pd

    phi_frame = pd.DataFrame(phi, columns=dm.feature_names)
    phi_frame.insert(0, "student_id", test.provenance["student_id"].to_numpy()[:n_rows])
    phi_frame.to_csv(explain_dir / "shap_values.csv", index=False)

    ranking = global_importance(model, rows, background, k=int(spec.get("top_k", 8)))
    _json_dump(
        {
            "base_value": base,
            "output_scale": "log-odds" if model.kind == "gbdt" else "probability",
            "top_features": [{"feature": n, "mean_abs_phi": v} for n, v in ranking.entries],
            "key": key.slug(),
            "treatment": treatment,
            "learner": learner,
        },
        explain_dir / "importance.json",
    )
    (explain_dir / "importance.md").write_text(report.importance_markdown(ranking))
    if config.figures:
        report.save_importance_figure(explain_dir / "importance.svg", ranking)


def _write_manifest(config: ExperimentConfig, out: Path) -> None:
    files = sorted(
        str(p.relative_to(out))
        for p in out.rglob("*")
        if p.is_file() and p.name != "manifest.json"
    )
    _json_dump({"config": config.raw_dict(), "seed": config.seed, "files": files},
               out / "manifest.json")
