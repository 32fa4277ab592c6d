from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np

from semcvdcm.core.metrics import (
    ChoiceData,
    cross_entropy_from_log_likelihood,
    interpretable_standard_errors,
    log_likelihood,
    null_log_likelihood,
    rho_squared,
    semantic_fit,
)
from semcvdcm.core.params import ModelParams
from semcvdcm.model.storage import StorageError, write_json

from .trainer import TrainingResult


def evaluate(params: ModelParams, data: ChoiceData) -> dict[str, Any]:
    """Fit statistics of one split. Cross entropy is derived from the same log-likelihood."""
    ll = log_likelihood(params, data)
    return {
        "n": data.n,
        "log_likelihood": ll,
        "null_log_likelihood": null_log_likelihood(data.n, data.j),
        "rho_squared": rho_squared(ll, data.n, data.j),
        "cross_entropy": cross_entropy_from_log_likelihood(ll, data.n),
    }


def parameter_counts(params: ModelParams, semantic: bool = True) -> dict[str, int]:
    head = sum(arr.size for name, arr in params.arrays().items() if params.group_of(name) == "head")
    interpretable = params.m + (int((~params.fixed_sem).sum()) if semantic else 0)
    counts = {
        "interpretable": interpretable,
        "residual": params.k,
        "head": head if semantic else 0,
    }
    counts["total"] = sum(counts.values())
    return counts


def _model_column(
    params: ModelParams,
    train: ChoiceData,
    test: ChoiceData | None,
    semantic: bool,
) -> dict[str, Any]:
    column: dict[str, Any] = {
        "parameters": parameter_counts(params, semantic),
        "train": evaluate(params, train),
        "test": evaluate(params, test) if test is not None else None,
    }
    if semantic:
        column["coefficients"] = interpretable_standard_errors(params, train)
        column["residual_norm"] = float(np.linalg.norm(params.beta_res))
    else:
        column["coefficients"] = {
            f"beta_num.{name}": {"estimate": float(value)}
            for name, value in zip(params.numeric_attributes, params.beta_num)
        }
    return column


def build_fit_report(
    result: TrainingResult,
    train: ChoiceData,
    test: ChoiceData | None = None,
) -> dict[str, Any]:
    report: dict[str, Any] = {
        "config": result.config.to_dict(),
        "reference_class": result.params.reference_class,
        "semantic": _model_column(result.params, train, test, semantic=True),
        "benchmark": None,
        "phases": [phase.to_dict() for phase in result.phases],
        "semantic_fit": None,
    }
    if result.benchmark is not None:
        report["benchmark"] = _model_column(result.benchmark, train, test, semantic=False)
    fit_data = test if test is not None else train
    if fit_data.has_labels:
        report["semantic_fit"] = semantic_fit(result.params, fit_data)
    return report


def _coefficient_cell(entry: dict[str, Any] | None) -> str:
    if entry is None:
        return ""
    text = f"{entry['estimate']:.3f}"
    se = entry.get("std_error")
    if se is not None:
        text += f" ({se:.3f})"
    return text


def _metric_cell(split: dict[str, Any] | None, key: str, fmt: str) -> str:
    if split is None:
        return ""
    return format(split[key], fmt)


def format_fit_report(report: dict[str, Any]) -> str:
    """Plain-text table: one row per coefficient and fit statistic, benchmark first."""
    columns = [(name, report[name]) for name in ("benchmark", "semantic") if report.get(name)]
    names: list[str] = []
    for _, column in columns:
        for key in column["coefficients"]:
            if key not in names:
                names.append(key)

    width = max([len(name) for name in names] + [24])
    header = "".ljust(width) + "".join(f"{title:>22}" for title, _ in columns)
    lines = [header, "Coefficients (std. error)"]
    for name in names:
        cells = "".join(
            f"{_coefficient_cell(col['coefficients'].get(name)):>22}" for _, col in columns
        )
        lines.append(f"  {name}".ljust(width) + cells)
    lines.append(
        "  number of parameters".ljust(width)
        + "".join(f"{col['parameters']['total']:>22d}" for _, col in columns)
    )
    for split in ("train", "test"):
        lines.append(f"{split.capitalize()} set")
        for label, key, fmt in (
            ("  observations", "n", "d"),
            ("  log-likelihood", "log_likelihood", ".1f"),
            ("  rho-squared", "rho_squared", ".3f"),
            ("  cross entropy", "cross_entropy", ".3f"),
        ):
            cells = "".join(f"{_metric_cell(col[split], key, fmt):>22}" for _, col in columns)
            lines.append(label.ljust(width) + cells)
    lines.append(f"Reference class: {report['reference_class']} (fixed at 0)")
    return "\n".join(lines) + "\n"


def write_fit_report(report: dict[str, Any], directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    json_path = directory / "fit_report.json"
    text_path = directory / "fit_report.txt"
    write_json(report, json_path)
    try:
        text_path.write_text(format_fit_report(report), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"Failed to write fit report: {text_path}") from exc
    return json_path, text_path
