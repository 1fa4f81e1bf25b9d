"""Report rendering: markdown tables shaped like the published comparison and
threshold tables, and static SVG charts for sweeps, horizon/history series,
rate evolution, and feature-importance rankings.

Charts are written through matplotlib's Agg backend with a fixed hash salt
and no embedded date so identical inputs produce identical bytes.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "dropcast"

import matplotlib.pyplot as plt
import pandas as pd

from .evaluate import EvalReport
from .explain import ImportanceRanking

_SAVE_KW = {"metadata": {"Date": None}, "format": "svg"}

COMPARISON_COLUMNS = [
    "Accuracy",
    "Recall (Continue)",
    "Precision (Continue)",
    "Recall (Dropout)",
    "Precision (Dropout)",
    "F1-Score",
    "AUC",
]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and pd.isna(x)):
        return ""
    return f"{x:.2f}"


def report_row(rep: EvalReport) -> list[str]:
    return [
        _fmt(rep.accuracy),
        _fmt(rep.recall_continue),
        _fmt(rep.precision_continue),
        _fmt(rep.recall_dropout),
        _fmt(rep.precision_dropout),
        _fmt(rep.macro_f1),
        _fmt(rep.auc),
    ]


def _markdown_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |",
             "| " + " | ".join("---" for _ in header) + " |"]
    lines.extend("| " + " | ".join(r) + " |" for r in rows)
    return "\n".join(lines) + "\n"


def comparison_markdown(cells: list[tuple[str, str, EvalReport]]) -> str:
    """Side-by-side treatment x learner table.

    ``cells`` holds (treatment, learner, report) in presentation order.
    """
    header = ["Technique", "Algorithm"] + COMPARISON_COLUMNS
    rows = [[treatment, learner] + report_row(rep) for treatment, learner, rep in cells]
    return _markdown_table(header, rows)


def comparison_frame(cells: list[tuple[str, str, EvalReport]]) -> pd.DataFrame:
    records = []
    for treatment, learner, rep in cells:
        records.append(
            {
                "treatment": treatment,
                "learner": learner,
                "accuracy": rep.accuracy,
                "recall_continue": rep.recall_continue,
                "precision_continue": rep.precision_continue,
                "recall_dropout": rep.recall_dropout,
                "precision_dropout": rep.precision_dropout,
                "macro_f1": rep.macro_f1,
                "auc": rep.auc,
            }
        )
    return pd.DataFrame.from_records(records)


def sweep_markdown(reports: list[EvalReport]) -> str:
    header = ["Threshold"] + COMPARISON_COLUMNS
    rows = [[_fmt(rep.threshold)] + report_row(rep) for rep in reports]
    return _markdown_table(header, rows)


def sweep_frame(reports: list[EvalReport]) -> pd.DataFrame:
    records = []
    for rep in reports:
        records.append(
            {
                "threshold": rep.threshold,
                "accuracy": rep.accuracy,
                "recall_continue": rep.recall_continue,
                "precision_continue": rep.precision_continue,
                "recall_dropout": rep.recall_dropout,
                "precision_dropout": rep.precision_dropout,
                "macro_f1": rep.macro_f1,
                "auc": rep.auc,
            }
        )
    return pd.DataFrame.from_records(records)


def importance_markdown(ranking: ImportanceRanking) -> str:
    header = ["Rank", "Feature", "Mean |attribution|"]
    rows = [
        [str(i + 1), name, f"{value:.4f}"]
        for i, (name, value) in enumerate(ranking.entries)
    ]
    return _markdown_table(header, rows)


# --- figures -----------------------------------------------------------------


def save_series_figure(path: str | Path, x, series: dict[str, list[float]],
                       xlabel: str, title: str) -> None:
    """Line chart of one or more metric series over a shared x axis."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, values in series.items():
        ax.plot(x, values, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("score")
    ax.set_title(title)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_sweep_figure(path: str | Path, reports: list[EvalReport], title: str) -> None:
    thresholds = [rep.threshold for rep in reports]
    series = {
        "accuracy": [rep.accuracy for rep in reports],
        "recall (dropout)": [rep.recall_dropout for rep in reports],
        "precision (dropout)": [rep.precision_dropout for rep in reports],
        "macro F1": [rep.macro_f1 for rep in reports],
    }
    save_series_figure(path, thresholds, series, "decision threshold", title)


def save_importance_figure(path: str | Path, ranking: ImportanceRanking,
                           title: str = "Top features by mean |attribution|") -> None:
    names = [name for name, _ in ranking.entries][::-1]
    values = [value for _, value in ranking.entries][::-1]
    fig, ax = plt.subplots(figsize=(7, 0.45 * max(len(names), 4) + 1.2))
    ax.barh(range(len(names)), values, color="#2b6cb0")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel("mean |attribution|")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_rates_figure(path: str | Path, table: pd.DataFrame, title: str) -> None:
    """Rate-evolution lines, one per table row, over academic years."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for group, row in table.iterrows():
        ax.plot(table.columns, row.to_numpy(), marker="o", label=str(group))
    ax.set_xlabel("academic year")
    ax.set_ylabel("dropout rate (%)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=7, ncols=2)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
