from __future__ import annotations

import logging
import math
from collections.abc import Collection, Iterable, Iterator
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from semcvdcm.core.metrics import ChoiceData, combined_loss
from semcvdcm.core.params import PARAMETER_GROUPS, ModelParams, init_params
from semcvdcm.core.utility import (
    clamp_semantics,
    choice_probabilities,
    head_forward,
    semantic_utility_raw_gradient,
)
from semcvdcm.model.entities import N_ALTERNATIVES, PREDICTED_TARGETS

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
# Gradients smaller than this are compared in absolute terms.
FD_SCALE_FLOOR = 1e-3


def _check_kappa(kappa: float) -> None:
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must be in [0, 1], got {kappa}")


def l2_penalty(
    params: ModelParams,
    trainable: Collection[str],
    l2_lambda: float,
    l2_groups: Collection[str],
) -> float:
    if l2_lambda == 0.0:
        return 0.0
    total = 0.0
    for name, arr in params.arrays().items():
        group = params.group_of(name)
        if group in trainable and group in l2_groups:
            free = arr[params.free_mask(name)]
            total += float(np.dot(free, free))
    return 0.5 * l2_lambda * total


def objective(
    params: ModelParams,
    data: ChoiceData,
    kappa: float,
    trainable: Collection[str] = PARAMETER_GROUPS,
    l2_lambda: float = 0.0,
    l2_groups: Collection[str] = PARAMETER_GROUPS,
) -> float:
    """combined_loss plus the L2 penalty that ``gradient`` differentiates."""
    return combined_loss(params, data, kappa) + l2_penalty(params, trainable, l2_lambda, l2_groups)


def gradient(
    params: ModelParams,
    batch: ChoiceData,
    kappa: float,
    trainable: Collection[str] = PARAMETER_GROUPS,
    l2_lambda: float = 0.0,
    l2_groups: Collection[str] = PARAMETER_GROUPS,
) -> dict[str, np.ndarray]:
    """Analytic gradient of ``objective`` for every parameter array.

    Frozen groups and fixed beta_sem entries receive exact zeros.
    """
    _check_kappa(kappa)
    if batch.n == 0:
        raise ValueError("Gradient needs a non-empty batch")
    if kappa > 0.0 and batch.targets is None:
        raise ValueError("missing label: kappa > 0 needs semantic labels")

    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    raw, hidden = head_forward(params, batch.z)
    n_images = raw.shape[0]
    g_raw = np.zeros_like(raw)

    if kappa < 1.0:
        semantics = clamp_semantics(raw)
        per_image = semantics @ params.beta_sem + batch.z @ params.beta_res
        v = per_image[batch.image_index] + batch.x @ params.beta_num
        if not np.isfinite(v).all():
            raise ValueError("Non-finite utilities in gradient computation")
        p = choice_probabilities(v)
        p[np.arange(batch.n), batch.chosen] -= 1.0
        d_v = (1.0 - kappa) * p / batch.n  # (N, J)
        d_image = np.bincount(batch.image_index.ravel(), weights=d_v.ravel(), minlength=n_images)

        grads["beta_num"] = np.einsum("nj,njm->m", d_v, batch.x)
        grads["beta_sem"] = d_image @ semantics
        grads["beta_res"] = d_image @ batch.z
        g_raw += d_image[:, None] * semantic_utility_raw_gradient(raw, params.beta_sem)

    if kappa > 0.0:
        assert batch.targets is not None
        residual = raw - batch.targets
        counts = np.bincount(batch.image_index.ravel(), minlength=n_images).astype(np.float64)
        denominator = batch.n * batch.j * len(PREDICTED_TARGETS)
        squared = float(counts @ ((residual**2) @ params.rmse_weights))
        rmse = math.sqrt(squared / denominator)
        if rmse > 0.0:
            g_raw += kappa * counts[:, None] * params.rmse_weights * residual / (denominator * rmse)

    if not np.isfinite(g_raw).all():
        raise ValueError("Non-finite head gradient")

    grads["head_weights"] = (batch.z if hidden is None else hidden).T @ g_raw
    grads["head_bias"] = g_raw.sum(axis=0)
    if hidden is not None:
        g_pre = (g_raw @ params.head_weights.T) * (1.0 - hidden**2)
        grads["hidden_weights"] = batch.z.T @ g_pre
        grads["hidden_bias"] = g_pre.sum(axis=0)

    for name, arr in params.arrays().items():
        group = params.group_of(name)
        if group not in trainable:
            grads[name] = np.zeros_like(arr)
            continue
        mask = params.free_mask(name)
        if l2_lambda and group in l2_groups:
            grads[name] = grads[name] + l2_lambda * arr
        grads[name] = np.where(mask, grads[name], 0.0)
    return grads


def finite_difference_gradient(
    params: ModelParams,
    batch: ChoiceData,
    kappa: float,
    trainable: Collection[str] = PARAMETER_GROUPS,
    l2_lambda: float = 0.0,
    l2_groups: Collection[str] = PARAMETER_GROUPS,
    step: float = FD_STEP,
) -> dict[str, np.ndarray]:
    """Central differences of ``objective`` for every free trainable entry."""
    settings = (trainable, l2_lambda, l2_groups)
    grads: dict[str, np.ndarray] = {}
    for name, arr in params.arrays().items():
        estimate = np.zeros_like(arr)
        if params.group_of(name) in trainable:
            mask = params.free_mask(name)
            for index in zip(*np.nonzero(mask)):
                values = {key: a.copy() for key, a in params.arrays().items()}
                values[name][index] = arr[index] + step
                plus = objective(params.replace(**values), batch, kappa, *settings)
                values[name][index] = arr[index] - step
                minus = objective(params.replace(**values), batch, kappa, *settings)
                estimate[index] = (plus - minus) / (2.0 * step)
        grads[name] = estimate
    return grads


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FD_SCALE_FLOOR)
    return np.abs(analytic - numeric) / scale


@dataclass
class GradientAudit:
    trials: int = 0
    tolerance: float = 1e-5
    max_relative_error: float = 0.0
    worst: dict[str, Any] = field(default_factory=dict)
    failures: int = 0

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "trials": self.trials,
            "tolerance": self.tolerance,
            "max_relative_error": self.max_relative_error,
            "failures": self.failures,
            "passed": self.passed,
            "worst": dict(self.worst),
        }


def audit_gradients(
    cases: Iterable[tuple[ModelParams, ChoiceData, float, Collection[str], float]],
    tolerance: float = 1e-5,
) -> GradientAudit:
    """Compare analytic and finite-difference gradients.

    Each case is (params, batch, kappa, trainable groups, l2_lambda).
    """
    audit = GradientAudit(tolerance=tolerance)
    for trial, (params, batch, kappa, trainable, l2_lambda) in enumerate(cases):
        analytic = gradient(params, batch, kappa, trainable, l2_lambda)
        numeric = finite_difference_gradient(params, batch, kappa, trainable, l2_lambda)
        trial_failed = False
        for name in analytic:
            errors = relative_errors(analytic[name], numeric[name])
            if errors.size == 0:
                continue
            worst = float(errors.max())
            if worst > audit.max_relative_error:
                audit.max_relative_error = worst
                audit.worst = {
                    "trial": trial,
                    "array": name,
                    "kappa": kappa,
                    "groups": sorted(trainable),
                }
            if worst > tolerance:
                trial_failed = True
        audit.trials += 1
        if trial_failed:
            audit.failures += 1
            logger.warning("Gradient mismatch in trial %d (kappa=%.3f)", trial, kappa)
    return audit


def random_audit_params(
    k: int,
    m: int,
    rng: np.random.Generator,
    hidden_units: int = 0,
    renormalised: bool = False,
    z_scale: float = 1.0,
) -> ModelParams:
    """Random coefficients whose head outputs stay away from the clamp kinks."""
    params = init_params(k, m, seed=int(rng.integers(2**31)), hidden_units=hidden_units)
    scale = max(z_scale, 1.0)
    n_targets = len(PREDICTED_TARGETS)
    bias = np.full(n_targets, 0.15 if renormalised else 0.08)
    bias[0] = 2.0
    values: dict[str, np.ndarray] = {
        "head_bias": bias,
        "beta_num": rng.uniform(-1.0, 1.0, size=m),
        "beta_sem": np.where(params.fixed_sem, 0.0, rng.uniform(-1.5, 1.5, size=params.t)),
        "beta_res": rng.uniform(-0.1, 0.1, size=k) / scale,
    }
    if hidden_units:
        values["hidden_weights"] = rng.uniform(-0.5, 0.5, size=(k, hidden_units)) / scale
        values["hidden_bias"] = rng.uniform(-0.5, 0.5, size=hidden_units)
        values["head_weights"] = rng.uniform(-0.005, 0.005, size=(hidden_units, n_targets))
    else:
        values["head_weights"] = rng.uniform(-0.01, 0.01, size=(k, n_targets)) / scale
    return params.replace(**values)


def random_audit_data(n: int, k: int, m: int, rng: np.random.Generator) -> ChoiceData:
    image_ids = tuple(f"img{i:04d}" for i in range(2 * n))
    targets = rng.uniform(0.0, 0.1, size=(2 * n, len(PREDICTED_TARGETS)))
    targets[:, 0] = rng.poisson(2.0, size=2 * n)
    return ChoiceData(
        obs_ids=tuple(f"obs{i:04d}" for i in range(n)),
        x=rng.normal(size=(n, N_ALTERNATIVES, m)),
        image_index=np.arange(2 * n, dtype=np.int64).reshape(n, N_ALTERNATIVES),
        chosen=rng.integers(0, N_ALTERNATIVES, size=n),
        image_ids=image_ids,
        z=rng.normal(size=(2 * n, k)),
        targets=targets,
    )


def check_gradients(
    data: ChoiceData | None = None,
    trials: int = 100,
    seed: int = 0,
    batch_size: int = 10,
    tolerance: float = 1e-5,
) -> GradientAudit:
    """Finite-difference audit over random coefficients, kappa values and trainable groups.

    Without ``data`` a small random choice set is generated; data without
    labels gets random targets so the RMSE term is exercised too.
    """
    rng = np.random.default_rng(seed)
    if data is None:
        data = random_audit_data(4 * batch_size, 6, 2, rng)
    elif data.targets is None:
        shape = (len(data.image_ids), len(PREDICTED_TARGETS))
        data = replace(data, targets=rng.uniform(0.0, 0.1, size=shape))
    z_scale = float(np.abs(data.z).sum(axis=1).max()) if data.z.size else 1.0

    def cases() -> Iterator[tuple[ModelParams, ChoiceData, float, tuple[str, ...], float]]:
        for trial in range(trials):
            rows = rng.choice(data.n, size=min(batch_size, data.n), replace=False)
            batch = data.take(np.sort(rows))
            params = random_audit_params(
                data.z.shape[1],
                data.x.shape[2],
                rng,
                hidden_units=3 if trial % 4 == 3 else 0,
                renormalised=trial % 2 == 1,
                z_scale=z_scale,
            )
            kappa = float(rng.choice([0.0, 1.0, rng.uniform()]))
            mask = rng.random(len(PARAMETER_GROUPS)) < 0.6
            groups = tuple(g for g, keep in zip(PARAMETER_GROUPS, mask) if keep) or PARAMETER_GROUPS
            l2_lambda = float(rng.choice([0.0, 0.1]))
            yield params, batch, kappa, groups, l2_lambda

    audit = audit_gradients(cases(), tolerance=tolerance)
    logger.info(
        "Gradient audit: %d trials, max relative error %.3g, %d failures",
        audit.trials,
        audit.max_relative_error,
        audit.failures,
    )
    return audit
