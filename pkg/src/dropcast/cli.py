"""Command-line interface.

Subcommands mirror the pipeline stages and compose through files: cohort CSV,
design-matrix CSV, split JSON, model JSON, and report JSON/CSV/markdown.
Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import evaluate, experiment, report, splits, trees
from .core import Cohort, ModelKey
from .evaluate import CorrectorConfig
from .explain import global_importance, tree_shap_batch
from .generator import GeneratorConfig, generate
from .matrix import DesignMatrix, build, dropout_rate_table
from .preprocess import FittedPreprocessor, PreprocessPlan, fit, modeling_feature_columns, modeling_frame

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _read_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"file not found: {p}")
    return json.loads(p.read_text())


def _parse_grid(text: str) -> list[float]:
    """Parse 'start:stop:step' or a comma list into a threshold grid."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        grid = []
        t = start
        while t <= stop + 1e-9:
            grid.append(round(t, 10))
            t += step
        return grid
    return [float(x) for x in text.split(",")]


def _load_matrix(path: str) -> DesignMatrix:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"matrix file not found: {p}")
    return DesignMatrix.from_csv(p)


def _select_rows(dm: DesignMatrix, split_path: str | None, rows: str) -> DesignMatrix:
    if split_path is None:
        return dm
    split = splits.SplitResult.from_json(split_path)
    if rows == "train":
        return dm.subset(split.train_rows)
    if rows == "test":
        return dm.subset(split.test_rows)
    return dm


# --- subcommand handlers -----------------------------------------------------


def _cmd_generate(args) -> int:
    cfg = GeneratorConfig.from_dict(_read_json(args.config)) if args.config else GeneratorConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    cohort = generate(cfg)
    cohort.to_csv(args.out)
    print(f"wrote {len(cohort)} student-year records to {args.out}")
    return EXIT_OK


def _cmd_prep(args) -> int:
    cohort = Cohort.from_csv(args.cohort)
    key = ModelKey.parse(args.key)
    plan = PreprocessPlan(**_read_json(args.plan)) if args.plan else PreprocessPlan()
    mf = modeling_frame(cohort)
    fp = fit(plan, mf, modeling_feature_columns(cohort))
    dm = build(cohort, key, fp)
    dm.to_csv(args.out)
    if args.preprocessor_out:
        Path(args.preprocessor_out).write_text(
            json.dumps(fp.to_dict(), indent=2, sort_keys=True) + "\n"
        )
    print(f"wrote design matrix with {dm.n_rows} rows x {len(dm.feature_names)} features to {args.out}")
    return EXIT_OK


def _cmd_split(args) -> int:
    dm = _load_matrix(args.matrix)
    spec = {"strategy": args.strategy, "test_fraction": args.test_fraction,
            "test_fraction_of_schools": args.school_fraction,
            "n_test_years": args.n_test_years}
    result = experiment.make_split(dm, spec, args.seed)
    result.to_json(args.out)
    print(f"split {result.strategy}: {len(result.train_rows)} train / "
          f"{len(result.test_rows)} test rows -> {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    dm = _load_matrix(args.matrix)
    train = _select_rows(dm, args.split, "train")
    Xt, yt, wt = experiment.apply_treatment(args.treatment, train.X, train.y, args.seed)
    overrides = _read_json(args.train_config) if args.train_config else {}
    if args.learner == "ensemble":
        members = {}
        names = overrides.pop("members", experiment.DEFAULT_ENSEMBLE_MEMBERS)
        for li, name in enumerate(names):
            cfg_dict = dict(experiment.DEFAULT_LEARNER_CONFIGS[name])
            cfg_dict.update(overrides.get(name, {}))
            cfg_dict["seed"] = args.seed + li
            members[name] = experiment.train_learner(
                name, Xt, yt, wt, trees.TrainConfig(**cfg_dict), dm.feature_names
            )
        model = trees.make_ensemble(list(members.values()))
    else:
        cfg_dict = dict(experiment.DEFAULT_LEARNER_CONFIGS[args.learner])
        cfg_dict.update(overrides)
        cfg_dict["seed"] = args.seed
        model = experiment.train_learner(
            args.learner, Xt, yt, wt, trees.TrainConfig(**cfg_dict), dm.feature_names
        )
    model.metadata = {"learner": args.learner, "treatment": args.treatment,
                      "seed": args.seed, "matrix": str(args.matrix)}
    trees.save(model, args.out)
    print(f"trained {args.learner} ({args.treatment}) on {len(Xt)} rows -> {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = trees.load(args.model)
    dm = _load_matrix(args.matrix)
    part = _select_rows(dm, args.split, args.rows)
    if list(part.feature_names) != model.feature_names:
        raise ValueError("matrix columns do not match the model feature schema")
    corr = CorrectorConfig(threshold=args.threshold)
    rep, _, _ = experiment.evaluate_cell(model, part.X, part.y, corr)
    rep.metadata = {"model": str(args.model), "matrix": str(args.matrix),
                    "rows": args.rows, "threshold": args.threshold}
    payload = rep.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    model = trees.load(args.model)
    dm = _load_matrix(args.matrix)
    part = _select_rows(dm, args.split, args.rows)
    if list(part.feature_names) != model.feature_names:
        raise ValueError("matrix columns do not match the model feature schema")
    probs = trees.predict_proba(model, part.X)
    grid = _parse_grid(args.grid)
    reports = evaluate.threshold_sweep(probs, part.y, grid)
    frame = report.sweep_frame(reports)
    frame.to_csv(args.out, index=False)
    if args.md:
        Path(args.md).write_text(report.sweep_markdown(reports))
    if args.figure:
        report.save_sweep_figure(args.figure, reports, "Threshold sweep")
    print(frame.to_string(index=False))
    return EXIT_OK


def _cmd_explain(args) -> int:
    model = trees.load(args.model)
    dm = _load_matrix(args.matrix)
    part = _select_rows(dm, args.split, args.rows)
    if list(part.feature_names) != model.feature_names:
        raise ValueError("matrix columns do not match the model feature schema")
    rng = np.random.default_rng(args.seed)
    bg_size = min(args.background_size, len(part.X))
    background = part.X[rng.choice(len(part.X), bg_size, replace=False)]
    n_rows = min(args.n_rows, len(part.X))
    rows = part.X[:n_rows]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    phi, base = tree_shap_batch(model, rows, background)
    phi_frame = pd.DataFrame(phi, columns=part.feature_names)
    phi_frame.insert(0, "student_id", part.provenance["student_id"].to_numpy()[:n_rows])
    phi_frame.to_csv(out_dir / "shap_values.csv", index=False)
    ranking = global_importance(model, rows, background, k=args.top_k)
    (out_dir / "importance.md").write_text(report.importance_markdown(ranking))
    (out_dir / "importance.json").write_text(
        json.dumps(
            {"base_value": base,
             "top_features": [{"feature": n, "mean_abs_phi": v} for n, v in ranking.entries]},
            indent=2, sort_keys=True,
        ) + "\n"
    )
    report.save_importance_figure(out_dir / "importance.svg", ranking)
    print(report.importance_markdown(ranking))
    return EXIT_OK


def _cmd_report(args) -> int:
    cohort_path = Path(args.run_dir) / "cohort.csv"
    if not cohort_path.exists():
        raise FileNotFoundError(f"no cohort.csv under {args.run_dir}")
    cohort = Cohort.from_csv(cohort_path)
    out = Path(args.run_dir)
    lines = ["# Run report", ""]
    for group_by in ("level", "cycle"):
        table = dropout_rate_table(cohort, group_by)
        table.to_csv(out / f"dropout_rates_{group_by}.csv")
        report.save_rates_figure(out / f"dropout_rates_{group_by}.svg", table,
                                 f"Dropout rate by {group_by}")
        lines.append(f"## Dropout rate by {group_by}\n")
        lines.append(table.to_markdown())
        lines.append("")
    for comparison in sorted(out.glob("cells/*/comparison.md")):
        lines.append(f"## Comparison: {comparison.parent.name}\n")
        lines.append(comparison.read_text())
    (out / "index.md").write_text("\n".join(lines))
    print(f"wrote {out / 'index.md'}")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = experiment.ExperimentConfig.from_json(args.config)
    out = experiment.run(config, out_dir=args.out, jobs=args.jobs)
    print(f"experiment artifacts written under {out}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dropcast",
                     description="Student dropout early-warning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic cohort CSV")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("prep", help="build a design matrix from a cohort")
    p.add_argument("--cohort", required=True)
    p.add_argument("--key", required=True, help="history,horizon,level (e.g. 1,1,6)")
    p.add_argument("--plan", help="preprocess plan JSON")
    p.add_argument("--preprocessor-out", help="where to save fitted preprocessor JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_prep)

    p = sub.add_parser("split", help="produce a train/test split of a matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--strategy", required=True,
                   choices=["guided_random", "by_schools", "by_years"])
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--school-fraction", type=float, default=0.3)
    p.add_argument("--n-test-years", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train a model on a design matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--learner", required=True,
                   choices=["tree", "forest", "gbdt", "ensemble"])
    p.add_argument("--treatment", default="baseline",
                   choices=["baseline", "class_weights", "undersample", "smote"])
    p.add_argument("--split", help="split JSON; trains on its train rows")
    p.add_argument("--train-config", help="JSON with training overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a model with the corrector")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--split", help="split JSON")
    p.add_argument("--rows", default="test", choices=["train", "test", "all"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="threshold sweep over the corrector grid")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--split", help="split JSON")
    p.add_argument("--rows", default="test", choices=["train", "test", "all"])
    p.add_argument("--grid", default="0.50:0.80:0.05")
    p.add_argument("--out", required=True)
    p.add_argument("--md", help="also write a markdown table")
    p.add_argument("--figure", help="also write an SVG chart")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("explain", help="Shapley attributions and top-k ranking")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--split", help="split JSON")
    p.add_argument("--rows", default="test", choices=["train", "test", "all"])
    p.add_argument("--background-size", type=int, default=256)
    p.add_argument("--n-rows", type=int, default=100)
    p.add_argument("--top-k", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("report", help="re-render tables and figures for a run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("run", help="run a full experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the config output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError, trees.ModelFormatError) as e:
        sys.stderr.write(f"data error: {e}\n")
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        sys.stderr.write(f"internal error: {e}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
