from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import log_softmax, softmax

from semcvdcm.model.entities import SEMANTIC_ATTRIBUTES, Embedding, SemanticVector

from .params import ModelParams

LOG_PROBABILITY_FLOOR = -745.0

EmbeddingLike = Union[Embedding, np.ndarray]


@dataclass(frozen=True)
class UtilityBreakdown:
    v_numeric: float
    v_semantic: float
    per_attribute: tuple[float, ...]
    v_residual: float
    v_total: float

    def to_dict(self) -> dict[str, float]:
        out = {
            "v_numeric": self.v_numeric,
            "v_semantic": self.v_semantic,
            "v_residual": self.v_residual,
            "v_total": self.v_total,
        }
        out.update(
            {f"u_{name}": value for name, value in zip(SEMANTIC_ATTRIBUTES, self.per_attribute)}
        )
        return out


def _embedding_values(z: EmbeddingLike) -> np.ndarray:
    values = z.values if isinstance(z, Embedding) else z
    return np.asarray(values, dtype=np.float64)


def head_forward(params: ModelParams, z: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Raw (pre-clamp) head outputs for a batch of embeddings, plus the hidden activations."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != params.k:
        raise ValueError(f"Embedding has K={z.shape[1]}, model expects K={params.k}")
    if params.hidden_weights is None or params.hidden_bias is None:
        return z @ params.head_weights + params.head_bias, None
    hidden = np.tanh(z @ params.hidden_weights + params.hidden_bias)
    return hidden @ params.head_weights + params.head_bias, hidden


def clamp_semantics(raw: np.ndarray) -> np.ndarray:
    """Map raw head outputs (n, 10) to valid semantic arrays (n, 11).

    car_count is clamped at zero, proportions to [0, 1]; the remainder is
    1 - sum(proportions) clamped to [0, 1], and when the proportions exceed
    one they are rescaled to sum to one.
    """
    raw = np.atleast_2d(raw)
    car = np.maximum(raw[:, :1], 0.0)
    clipped = np.clip(raw[:, 1:], 0.0, 1.0)
    total = clipped.sum(axis=1, keepdims=True)
    over = total > 1.0
    proportions = np.where(over, clipped / np.where(over, total, 1.0), clipped)
    unsegmented = np.clip(1.0 - proportions.sum(axis=1, keepdims=True), 0.0, 1.0)
    return np.hstack([car, proportions, unsegmented])


def semantic_utility_raw_gradient(raw: np.ndarray, beta_sem: np.ndarray) -> np.ndarray:
    """d(clamp_semantics(raw) @ beta_sem) / d raw, row by row (n, 10)."""
    raw = np.atleast_2d(raw)
    grad = np.zeros_like(raw)
    grad[:, 0] = np.where(raw[:, 0] > 0.0, beta_sem[0], 0.0)

    active = (raw[:, 1:] > 0.0) & (raw[:, 1:] < 1.0)
    clipped = np.clip(raw[:, 1:], 0.0, 1.0)
    total = clipped.sum(axis=1, keepdims=True)
    beta_p = beta_sem[1:-1]
    beta_u = beta_sem[-1]

    under = beta_p - beta_u
    safe_total = np.where(total > 0.0, total, 1.0)
    weighted = (clipped @ beta_p)[:, None] / safe_total
    over = (beta_p - weighted) / safe_total
    grad[:, 1:] = np.where(total > 1.0, over, under) * active
    return grad


def predict_semantics_batch(params: ModelParams, z: np.ndarray) -> np.ndarray:
    raw, _ = head_forward(params, z)
    return clamp_semantics(raw)


def predict_semantics(params: ModelParams, z: EmbeddingLike) -> SemanticVector:
    values = _embedding_values(z)
    if values.ndim != 1 or values.shape[0] != params.k:
        raise ValueError(f"Embedding has shape {values.shape}, model expects K={params.k}")
    return SemanticVector.from_array(predict_semantics_batch(params, values[None, :])[0])


def systematic_utility(
    params: ModelParams,
    x: np.ndarray | tuple[float, ...] | None,
    s: SemanticVector,
    z: EmbeddingLike | None,
    include_numeric: bool = True,
    include_residual: bool = True,
) -> UtilityBreakdown:
    semantics = s.to_array()
    if not np.isfinite(semantics).all():
        raise ValueError("Semantic vector contains non-finite values")

    v_numeric = 0.0
    if include_numeric:
        if x is None:
            raise ValueError("Numeric attributes are required when include_numeric is set")
        attrs = np.asarray(x, dtype=np.float64)
        if attrs.shape != (params.m,):
            raise ValueError(
                f"Numeric attributes have shape {attrs.shape}, model expects M={params.m}"
            )
        if not np.isfinite(attrs).all():
            raise ValueError("Numeric attributes contain non-finite values")
        v_numeric = math.fsum(params.beta_num * attrs)

    per_attribute = tuple(float(v) for v in params.beta_sem * semantics)
    v_semantic = math.fsum(per_attribute)

    v_residual = 0.0
    if include_residual:
        if z is None:
            raise ValueError("Embedding is required when include_residual is set")
        values = _embedding_values(z)
        if values.shape != (params.k,):
            raise ValueError(f"Embedding has shape {values.shape}, model expects K={params.k}")
        if not np.isfinite(values).all():
            raise ValueError("Embedding contains non-finite values")
        v_residual = math.fsum(params.beta_res * values)

    return UtilityBreakdown(
        v_numeric=v_numeric,
        v_semantic=v_semantic,
        per_attribute=per_attribute,
        v_residual=v_residual,
        v_total=v_numeric + v_semantic + v_residual,
    )


def choice_probabilities(v: np.ndarray | list[float] | tuple[float, ...]) -> np.ndarray:
    """Logit choice probabilities; accepts one choice set (J,) or a batch (N, J)."""
    utilities = np.asarray(v, dtype=np.float64)
    if utilities.shape[-1] < 2:
        raise ValueError("A choice set needs at least two alternatives")
    if not np.isfinite(utilities).all():
        raise ValueError("Utilities contain non-finite values")
    return softmax(utilities, axis=-1)


def log_choice_probabilities(v: np.ndarray) -> np.ndarray:
    return np.maximum(log_softmax(np.asarray(v, dtype=np.float64), axis=-1), LOG_PROBABILITY_FLOOR)


def intervention_utility(params: ModelParams, change: dict[str, float]) -> float:
    """Utility change of a semantic change vector.

    Example change: ``{"p_building": -0.1, "p_car": 0.1, "car_count": 3}``.
    """
    unknown = set(change) - set(SEMANTIC_ATTRIBUTES)
    if unknown:
        raise ValueError(f"Unknown semantic attributes: {sorted(unknown)}")
    return math.fsum(
        float(params.beta_sem[SEMANTIC_ATTRIBUTES.index(name)]) * float(delta)
        for name, delta in change.items()
    )
