from __future__ import annotations

import logging
import time
from collections.abc import Callable, Collection, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.optimize import minimize

from semcvdcm.core.metrics import ChoiceData, log_likelihood, loss_components
from semcvdcm.core.params import ModelParams, init_params
from semcvdcm.model.dataset import Dataset

from .config import PhaseResult, TrainConfig, assert_valid_config
from .gradients import gradient, objective

logger = logging.getLogger(__name__)

PHASE_NAMES = ("phase1", "phase2", "phase3")
BENCHMARK_GROUPS = ("beta_num", "beta_res")
BENCHMARK_STREAM = 4

PhaseCallback = Callable[[ModelParams, PhaseResult], None]


@dataclass(frozen=True)
class TrainingData:
    """Training observations plus the held-out subset used for early stopping."""

    train: ChoiceData
    validation: ChoiceData


@dataclass
class TrainingResult:
    params: ModelParams
    phases: list[PhaseResult]
    config: TrainConfig
    data: TrainingData
    benchmark: ModelParams | None = None
    benchmark_phase: PhaseResult | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "config": self.config.to_dict(),
            "phases": [phase.to_dict() for phase in self.phases],
        }
        if self.benchmark_phase is not None:
            out["benchmark_phase"] = self.benchmark_phase.to_dict()
        return out


def carve_validation(data: ChoiceData, fraction: float, seed: int) -> TrainingData:
    """Seeded split of the training rows.

    When nothing is carved out the validation set is the training set itself.
    """
    n_validation = int(round(fraction * data.n))
    if n_validation == 0 or n_validation >= data.n:
        return TrainingData(train=data, validation=data)
    order = np.random.default_rng([seed, 0]).permutation(data.n)
    return TrainingData(
        train=data.take(np.sort(order[n_validation:])),
        validation=data.take(np.sort(order[:n_validation])),
    )


def compile_split(dataset: Dataset, name: str) -> ChoiceData:
    observations = dataset.split_observations(name)
    if not observations:
        raise ValueError(f"Split {name!r} has no observations")
    return ChoiceData.from_observations(observations, dataset.embeddings, dataset.labels)


def prepare_training_data(dataset: Dataset, config: TrainConfig) -> TrainingData:
    train = compile_split(dataset, "train")
    return carve_validation(train, config.validation_fraction, config.seed)


def initial_params(dataset: Dataset, config: TrainConfig, k: int | None = None) -> ModelParams:
    manifest = dataset.manifest
    return init_params(
        k if k is not None else dataset.embeddings.k,
        len(manifest.numeric_attributes),
        seed=config.seed,
        reference_class=config.reference_class,
        hidden_units=config.hidden_units,
        rmse_weights=config.rmse_weights,
        numeric_attributes=manifest.numeric_attributes,
        units=manifest.units,
    )


def sgd_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    config: TrainConfig,
    trainable: Collection[str],
) -> ModelParams:
    """theta <- theta - lr * (g + l2 * theta) on free entries of trainable groups."""
    updated: dict[str, np.ndarray] = {}
    for name, arr in params.arrays().items():
        group = params.group_of(name)
        if group not in trainable:
            continue
        if grads[name].shape != arr.shape:
            raise ValueError(
                f"Gradient for {name} has shape {grads[name].shape}, expected {arr.shape}"
            )
        step = grads[name]
        if config.l2_lambda and group in config.l2_groups:
            step = step + config.l2_lambda * arr
        mask = params.free_mask(name)
        updated[name] = np.where(mask, arr - config.learning_rate * step, arr)
    return params.replace(**updated)


def _free_vector(params: ModelParams, trainable: Collection[str]) -> np.ndarray:
    parts = [
        arr[params.free_mask(name)]
        for name, arr in params.arrays().items()
        if params.group_of(name) in trainable
    ]
    return np.concatenate(parts) if parts else np.zeros(0)


def _with_free_vector(
    params: ModelParams, trainable: Collection[str], theta: np.ndarray
) -> ModelParams:
    updated: dict[str, np.ndarray] = {}
    offset = 0
    for name, arr in params.arrays().items():
        if params.group_of(name) not in trainable:
            continue
        mask = params.free_mask(name)
        size = int(mask.sum())
        values = arr.copy()
        values[mask] = theta[offset : offset + size]
        updated[name] = values
        offset += size
    return params.replace(**updated)


def _history_entry(phase: str, epoch: int, components: dict[str, float | None]) -> dict[str, Any]:
    return {"phase": phase, "epoch": epoch, "validation": dict(components)}


def _run_sgd(
    params: ModelParams,
    data: TrainingData,
    config: TrainConfig,
    stream: int,
    name: str,
    kappa: float,
    trainable: tuple[str, ...],
    max_epochs: int,
    result: PhaseResult,
    history: list[dict[str, Any]],
    monitor_ll: bool,
) -> ModelParams:
    rng = np.random.default_rng([config.seed, stream])
    best = params
    best_loss = loss_components(params, data.validation, kappa)["loss"]
    stale = 0
    last_ll = log_likelihood(params, data.train) if monitor_ll else 0.0

    for epoch in range(1, max_epochs + 1):
        previous = params
        order = rng.permutation(data.train.n)
        for start in range(0, data.train.n, config.batch_size):
            batch = data.train.take(order[start : start + config.batch_size])
            grads = gradient(params, batch, kappa, trainable)
            params = sgd_step(params, grads, config, trainable)
        result.epochs_run = epoch

        if monitor_ll:
            ll = log_likelihood(params, data.train)
            if ll < last_ll - config.ll_tolerance:
                logger.info("%s: training log-likelihood fell at epoch %d, reverting", name, epoch)
                params = previous
                result.stop_reason = "ll_decrease"
                break
            last_ll = ll

        components = loss_components(params, data.validation, kappa)
        history.append(_history_entry(name, epoch, components))
        logger.debug("%s epoch %d: %s", name, epoch, components)
        loss = components["loss"]
        assert loss is not None and best_loss is not None
        if loss < best_loss - config.min_delta:
            best, best_loss, stale = params, loss, 0
        else:
            stale += 1
            if stale >= config.patience:
                result.stop_reason = "early_stop"
                break

    return best


def _run_lbfgs(
    params: ModelParams,
    data: TrainingData,
    config: TrainConfig,
    name: str,
    kappa: float,
    trainable: tuple[str, ...],
    max_epochs: int,
    result: PhaseResult,
    history: list[dict[str, Any]],
) -> ModelParams:
    theta0 = _free_vector(params, trainable)
    if theta0.size == 0:
        return params

    def fun(theta: np.ndarray) -> tuple[float, np.ndarray]:
        candidate = _with_free_vector(params, trainable, theta)
        l2 = (config.l2_lambda, config.l2_groups)
        value = objective(candidate, data.train, kappa, trainable, *l2)
        grads = gradient(candidate, data.train, kappa, trainable, *l2)
        return value, _free_vector(candidate.replace(**grads), trainable)

    solution = minimize(
        fun,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_epochs, "gtol": 1e-8, "ftol": 1e-15},
    )
    result.epochs_run = int(solution.nit)
    result.stop_reason = "converged" if solution.success else "max_epochs"
    fitted = _with_free_vector(params, trainable, np.asarray(solution.x, dtype=np.float64))
    components = loss_components(fitted, data.validation, kappa)
    history.append(_history_entry(name, result.epochs_run, components))
    logger.debug("%s: %s", name, solution.message)
    return fitted


def run_phase(
    params: ModelParams,
    data: TrainingData,
    config: TrainConfig,
    name: str,
    kappa: float,
    trainable: Sequence[str],
    max_epochs: int,
    stream: int,
    monitor_ll: bool = False,
) -> tuple[ModelParams, PhaseResult]:
    """Train the ``trainable`` groups of ``params``; every other group is left bitwise intact."""
    assert_valid_config(config)
    groups = tuple(trainable)
    if kappa > 0.0 and not data.train.has_labels:
        raise ValueError(f"missing label: {name} uses kappa={kappa} but some images have no labels")

    result = PhaseResult(phase=name, trainable_groups=groups, checksums_before=params.checksums())
    history = list(params.history)
    started = time.perf_counter()
    if max_epochs > 0:
        if config.optimizer == "lbfgs":
            params = _run_lbfgs(
                params, data, config, name, kappa, groups, max_epochs, result, history
            )
        else:
            params = _run_sgd(
                params, data, config, stream, name, kappa, groups,
                max_epochs, result, history, monitor_ll,
            )
    params = params.replace()
    params.history = history

    result.wall_time = time.perf_counter() - started
    result.checksums_after = params.checksums()
    result.validation_components = loss_components(params, data.validation, kappa)
    result.train_components = loss_components(params, data.train, kappa)
    if not result.frozen_groups_intact:
        raise RuntimeError(f"{name} modified a frozen parameter group")
    logger.info(
        "%s finished after %d epochs (%s): validation loss %.6g",
        name,
        result.epochs_run,
        result.stop_reason,
        result.validation_components["loss"],
    )
    return params, result


PhaseOutcome = tuple[ModelParams, PhaseResult]


def _configured_phase(
    params: ModelParams,
    data: TrainingData,
    config: TrainConfig,
    index: int,
    monitor_ll: bool = False,
) -> PhaseOutcome:
    return run_phase(
        params,
        data,
        config,
        PHASE_NAMES[index],
        config.kappa[index],
        config.phase_groups[index],
        config.max_epochs[index],
        stream=index + 1,
        monitor_ll=monitor_ll,
    )


def train_phase1(params: ModelParams, data: TrainingData, config: TrainConfig) -> PhaseOutcome:
    """Fit the semantic head to the labels (kappa 1 by default)."""
    if not data.train.has_labels or not data.validation.has_labels:
        raise ValueError("missing label: phase 1 needs semantic labels for every training image")
    return _configured_phase(params, data, config, 0)


def train_phase2(params: ModelParams, data: TrainingData, config: TrainConfig) -> PhaseOutcome:
    """Estimate the interpretable coefficients with the head frozen and the residual at zero."""
    if np.any(params.beta_res != 0.0):
        raise ValueError("Phase 2 expects the residual coefficients to be zero")
    return _configured_phase(params, data, config, 1)


def train_phase3(params: ModelParams, data: TrainingData, config: TrainConfig) -> PhaseOutcome:
    return _configured_phase(params, data, config, 2, monitor_ll=True)


def train_benchmark(data: TrainingData, template: ModelParams, config: TrainConfig) -> PhaseOutcome:
    """Plain embedding model: numeric attributes plus a linear term on the embedding."""
    start = template.replace(
        beta_num=np.zeros_like(template.beta_num),
        beta_sem=np.zeros_like(template.beta_sem),
        beta_res=np.zeros_like(template.beta_res),
    )
    start.history = []
    max_epochs = max(config.max_epochs[1], config.max_epochs[2])
    return run_phase(
        start, data, config, "benchmark", 0.0, BENCHMARK_GROUPS, max_epochs, BENCHMARK_STREAM
    )


def train_sequential(
    dataset: Dataset,
    config: TrainConfig,
    on_phase_end: PhaseCallback | None = None,
) -> TrainingResult:
    """Run the three phases in order.

    ``on_phase_end`` is called with the parameters after every completed phase
    so callers can persist partial results before a later phase fails.
    """
    assert_valid_config(config)
    if dataset.split is None:
        raise ValueError("Training needs a train/test split")
    report = dataset.validate()
    blocking = [issue for issue in report.issues if not issue.startswith("missing label")]
    if blocking:
        raise ValueError("Invalid dataset:\n- " + "\n- ".join(blocking[:50]))

    data = prepare_training_data(dataset, config)
    logger.info(
        "Training on %d observations (%d held out for early stopping), K=%d",
        data.train.n,
        data.validation.n if data.validation is not data.train else 0,
        dataset.embeddings.k,
    )
    params = initial_params(dataset, config)
    phases: list[PhaseResult] = []
    for step in (train_phase1, train_phase2, train_phase3):
        params, result = step(params, data, config)
        phases.append(result)
        if on_phase_end is not None:
            on_phase_end(params, result)

    outcome = TrainingResult(params=params, phases=phases, config=config, data=data)
    if config.benchmark:
        outcome.benchmark, outcome.benchmark_phase = train_benchmark(data, params, config)
    return outcome

