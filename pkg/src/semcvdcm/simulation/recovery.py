from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import replace
from typing import Any

from semcvdcm.core.metrics import ChoiceData, interpretable_standard_errors
from semcvdcm.core.params import ModelParams
from semcvdcm.model.entities import SEMANTIC_ATTRIBUTES
from semcvdcm.training.config import TrainConfig
from semcvdcm.training.report import evaluate
from semcvdcm.training.trainer import compile_split, train_sequential

from .simulator import SyntheticDataset, bayes_optimal_cross_entropy, simulate_dataset
from .spec import SyntheticSpec

logger = logging.getLogger(__name__)

RECOVERY_TOLERANCE = 0.05
DEFAULT_RECOVERY_SIZES = (5_000, 20_000, 80_000)


def recovery_config(seed: int = 0, **overrides: Any) -> TrainConfig:
    """Full-batch quasi-Newton fit of the unpenalised likelihood on every training row."""
    config = TrainConfig(optimizer="lbfgs", l2_lambda=0.0, validation_fraction=0.0, seed=seed)
    return config.with_overrides(**overrides)


def _coefficient_rows(
    spec: SyntheticSpec,
    params: ModelParams,
    standard_errors: dict[str, dict[str, Any]],
    tolerance: float,
) -> list[dict[str, Any]]:
    rows: list[dict[str, Any]] = []
    truth = [(f"beta_num.{name}", value) for name, value in spec.true_beta_num.items()]
    truth += [
        (f"beta_sem.{name}", spec.true_beta_sem[name])
        for name in SEMANTIC_ATTRIBUTES
        if name != params.reference_class
    ]
    estimates = dict(zip((f"beta_num.{n}" for n in params.numeric_attributes), params.beta_num))
    estimates.update(zip((f"beta_sem.{n}" for n in SEMANTIC_ATTRIBUTES), params.beta_sem))
    for name, true_value in truth:
        estimate = float(estimates[name])
        error = abs(estimate - true_value)
        se = standard_errors.get(name, {}).get("std_error")
        rows.append(
            {
                "coefficient": name,
                "true": true_value,
                "estimate": estimate,
                "abs_error": error,
                "std_error": se,
                "within_tolerance": error <= tolerance,
                "within_4se": None if se is None else error <= 4.0 * se,
            }
        )
    return rows


def parameter_recovery_experiment(
    spec: SyntheticSpec,
    config: TrainConfig | None = None,
    tolerance: float = RECOVERY_TOLERANCE,
    synthetic: SyntheticDataset | None = None,
) -> dict[str, Any]:
    """Simulate, train and compare the estimates with the generating coefficients."""
    config = config or recovery_config(spec.seed)
    synthetic = synthetic or simulate_dataset(spec)
    dataset = synthetic.to_dataset()
    result = train_sequential(dataset, config)

    train = compile_split(dataset, "train")
    test: ChoiceData | None = compile_split(dataset, "test") if dataset.split.test else None
    rows = _coefficient_rows(
        spec, result.params, interpretable_standard_errors(result.params, train), tolerance
    )
    report: dict[str, Any] = {
        "spec": spec.to_dict(),
        "config": config.to_dict(),
        "n_observations": spec.n_observations,
        "tolerance": tolerance,
        "coefficients": rows,
        "mean_abs_error": math.fsum(row["abs_error"] for row in rows) / len(rows),
        "max_abs_error": max(row["abs_error"] for row in rows),
        "all_within_tolerance": all(row["within_tolerance"] for row in rows),
        "train": evaluate(result.params, train),
        "test": None,
        "bayes_optimal_cross_entropy": None,
        "phases": [phase.to_dict() for phase in result.phases],
    }
    if test is not None:
        test_obs = dataset.split_observations("test")
        report["test"] = evaluate(result.params, test)
        report["bayes_optimal_cross_entropy"] = bayes_optimal_cross_entropy(
            spec, test_obs, synthetic.labels
        )
    logger.info(
        "Recovery at N=%d: mean abs error %.4f, max %.4f",
        spec.n_observations,
        report["mean_abs_error"],
        report["max_abs_error"],
    )
    return report


def recovery_curve(
    spec: SyntheticSpec,
    config: TrainConfig | None = None,
    sizes: Sequence[int] = DEFAULT_RECOVERY_SIZES,
) -> dict[str, Any]:
    """Recovery error over growing sample sizes with everything else held fixed."""
    points = []
    for n in sizes:
        report = parameter_recovery_experiment(replace(spec, n_observations=n), config)
        points.append(
            {
                "n_observations": n,
                "mean_abs_error": report["mean_abs_error"],
                "max_abs_error": report["max_abs_error"],
            }
        )
    errors = [point["mean_abs_error"] for point in points]
    return {
        "points": points,
        "non_increasing": all(b <= a for a, b in zip(errors, errors[1:])),
        "largest_beats_smallest": errors[-1] < errors[0] if len(errors) > 1 else True,
    }
