from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import linalg, stats

from semcvdcm.model.entities import (
    PREDICTED_TARGETS,
    SEMANTIC_ATTRIBUTES,
    ChoiceObservation,
    SemanticVector,
)

from .params import ModelParams
from .utility import clamp_semantics, head_forward, log_choice_probabilities

# Relative pivot size below which a design column counts as unidentified.
IDENTIFICATION_RTOL = 1e-8


@dataclass(frozen=True)
class ChoiceData:
    """Array form of a set of choice observations.

    ``image_index`` points into ``image_ids``/``z``/``targets``; every image
    referenced by the observations appears exactly once in that table.
    """

    obs_ids: tuple[str, ...]
    x: np.ndarray  # (N, J, M)
    image_index: np.ndarray  # (N, J)
    chosen: np.ndarray  # (N,)
    image_ids: tuple[str, ...]
    z: np.ndarray  # (n_images, K)
    targets: np.ndarray | None = None  # (n_images, 10)

    @property
    def n(self) -> int:
        return int(self.chosen.shape[0])

    @property
    def j(self) -> int:
        return int(self.image_index.shape[1])

    @property
    def has_labels(self) -> bool:
        return self.targets is not None

    def take(self, rows: np.ndarray | Sequence[int]) -> ChoiceData:
        rows = np.asarray(rows, dtype=np.int64)
        image_index = self.image_index[rows]
        used, inverse = np.unique(image_index, return_inverse=True)
        return ChoiceData(
            obs_ids=tuple(self.obs_ids[r] for r in rows),
            x=self.x[rows],
            image_index=inverse.reshape(image_index.shape),
            chosen=self.chosen[rows],
            image_ids=tuple(self.image_ids[i] for i in used),
            z=self.z[used],
            targets=None if self.targets is None else self.targets[used],
        )

    @classmethod
    def from_observations(
        cls,
        observations: Sequence[ChoiceObservation],
        embeddings: Mapping[str, np.ndarray],
        labels: Mapping[str, SemanticVector] | None = None,
        require_labels: bool = False,
    ) -> ChoiceData:
        if not observations:
            raise ValueError("No observations")
        image_ids = sorted({img for obs in observations for img in obs.image_ids})
        missing = [img for img in image_ids if img not in embeddings]
        if missing:
            raise ValueError(f"missing embedding for images {missing[:10]}")

        targets = None
        if labels is not None:
            unlabelled = [img for img in image_ids if img not in labels]
            if unlabelled and require_labels:
                raise ValueError(f"missing label for images {unlabelled[:10]}")
            if not unlabelled:
                targets = np.vstack([labels[img].targets() for img in image_ids])
        elif require_labels:
            raise ValueError("missing label: no semantic labels supplied")

        position = {img: i for i, img in enumerate(image_ids)}
        rows = getattr(embeddings, "rows", None)
        if callable(rows):
            z = rows(image_ids)
        else:
            z = np.vstack([np.asarray(embeddings[img], dtype=np.float64) for img in image_ids])

        return cls(
            obs_ids=tuple(obs.obs_id for obs in observations),
            x=np.array(
                [[alt.numeric_attrs for alt in obs.alternatives] for obs in observations],
                dtype=np.float64,
            ),
            image_index=np.array(
                [[position[img] for img in obs.image_ids] for obs in observations], dtype=np.int64
            ),
            chosen=np.array([obs.chosen for obs in observations], dtype=np.int64),
            image_ids=tuple(image_ids),
            z=np.asarray(z, dtype=np.float64),
            targets=targets,
        )


def compile_choices(
    observations: Sequence[ChoiceObservation],
    embeddings: Mapping[str, np.ndarray],
    labels: Mapping[str, SemanticVector] | None = None,
) -> ChoiceData:
    return ChoiceData.from_observations(observations, embeddings, labels)


def utilities(
    params: ModelParams,
    data: ChoiceData,
    include_numeric: bool = True,
    include_residual: bool = True,
) -> np.ndarray:
    """Systematic utilities (N, J) with predicted (clamped) semantics."""
    if data.x.shape[2] != params.m:
        raise ValueError(f"Data has M={data.x.shape[2]}, model expects M={params.m}")
    raw, _ = head_forward(params, data.z)
    per_image = clamp_semantics(raw) @ params.beta_sem
    if include_residual:
        per_image = per_image + data.z @ params.beta_res
    v = per_image[data.image_index]
    if include_numeric:
        v = v + data.x @ params.beta_num
    return v


def log_likelihood(params: ModelParams, data: ChoiceData) -> float:
    log_p = log_choice_probabilities(utilities(params, data))
    return math.fsum(log_p[np.arange(data.n), data.chosen])


def cross_entropy_from_log_likelihood(ll: float, n: int) -> float:
    if n <= 0:
        raise ValueError("Cross entropy needs at least one observation")
    return -ll / n


def cross_entropy(params: ModelParams, data: ChoiceData) -> float:
    return cross_entropy_from_log_likelihood(log_likelihood(params, data), data.n)


def null_log_likelihood(n: int, j: int) -> float:
    return n * math.log(1.0 / j)


def rho_squared(ll: float, n: int, j: int) -> float:
    """McFadden's rho-squared against the equal-shares null model."""
    if n <= 0 or j < 2:
        raise ValueError(f"rho_squared needs n > 0 and j >= 2 (got n={n}, j={j})")
    if ll > 0:
        raise ValueError(f"Log-likelihood must be <= 0, got {ll}")
    return 1.0 - ll / null_log_likelihood(n, j)


def _weighted_squared_error(params: ModelParams, data: ChoiceData) -> tuple[float, int]:
    if data.targets is None:
        raise ValueError("missing label: semantic RMSE needs labels for every image")
    raw, _ = head_forward(params, data.z)
    residual = raw - data.targets
    counts = np.bincount(data.image_index.ravel(), minlength=len(data.image_ids))
    per_image = (residual**2) @ params.rmse_weights
    return float(counts @ per_image), data.n * data.j * len(PREDICTED_TARGETS)


def semantic_rmse(params: ModelParams, data: ChoiceData) -> float:
    """RMSE of the raw head outputs against the labels over every (n, j, s)."""
    total, denominator = _weighted_squared_error(params, data)
    return math.sqrt(total / denominator)


def loss_components(params: ModelParams, data: ChoiceData, kappa: float) -> dict[str, float | None]:
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must be in [0, 1], got {kappa}")
    ce = cross_entropy(params, data) if kappa < 1.0 else None
    rmse = semantic_rmse(params, data) if kappa > 0.0 else None
    if ce is None:
        loss = rmse
    elif rmse is None:
        loss = ce
    else:
        loss = (1.0 - kappa) * ce + kappa * rmse
    return {"cross_entropy": ce, "rmse": rmse, "loss": loss}


def combined_loss(params: ModelParams, data: ChoiceData, kappa: float) -> float:
    loss = loss_components(params, data, kappa)["loss"]
    assert loss is not None
    return loss


def semantic_fit(params: ModelParams, data: ChoiceData) -> dict[str, dict[str, float | None]]:
    """Predicted vs labelled semantics over the unique images: r, RMSE and slope per target."""
    if data.targets is None:
        raise ValueError("missing label: semantic fit needs labels")
    predicted = clamp_semantics(head_forward(params, data.z)[0])[:, :-1]
    out: dict[str, dict[str, float | None]] = {}
    for index, name in enumerate(PREDICTED_TARGETS):
        truth = data.targets[:, index]
        guess = predicted[:, index]
        rmse = float(np.sqrt(np.mean((truth - guess) ** 2)))
        if len(truth) < 2 or np.ptp(truth) == 0.0 or np.ptp(guess) == 0.0:
            out[name] = {"pearson_r": None, "rmse": rmse, "slope": None}
            continue
        fit = stats.linregress(truth, guess)
        out[name] = {"pearson_r": float(fit.rvalue), "rmse": rmse, "slope": float(fit.slope)}
    return out


def identified_columns(
    information: np.ndarray, rtol: float = IDENTIFICATION_RTOL
) -> tuple[np.ndarray, np.ndarray]:
    """Indices of a maximal linearly independent set of design columns.

    Columns with no variance and columns that are linear combinations of
    others (found by pivoted QR of the unit-diagonal information matrix)
    are left out. Also returns the per-column scale ``sqrt(diag)``.
    """
    scale = np.sqrt(np.clip(np.diag(information), 0.0, None))
    if scale.size == 0 or scale.max() <= 0.0:
        return np.arange(0), scale
    live = np.flatnonzero(scale > rtol * scale.max())
    unit = information[np.ix_(live, live)] / np.outer(scale[live], scale[live])
    _, r, pivots = linalg.qr(unit, pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rtol * diag[0]))
    return np.sort(live[pivots[:rank]]), scale


def interpretable_standard_errors(
    params: ModelParams, data: ChoiceData
) -> dict[str, dict[str, Any]]:
    """Asymptotic standard errors of beta_num and the free beta_sem entries.

    Uses the analytic logit information matrix with the head and beta_res held
    at their current values.
    """
    raw, _ = head_forward(params, data.z)
    semantics = clamp_semantics(raw)[data.image_index]  # (N, J, T)
    free_sem = np.flatnonzero(~params.fixed_sem)
    design = np.concatenate([data.x, semantics[:, :, free_sem]], axis=2)
    names = [*(f"beta_num.{n}" for n in params.numeric_attributes)]
    names += [f"beta_sem.{SEMANTIC_ATTRIBUTES[i]}" for i in free_sem]
    estimates = np.concatenate([params.beta_num, params.beta_sem[free_sem]])

    p = np.exp(log_choice_probabilities(utilities(params, data)))
    mean_design = np.einsum("nj,njk->nk", p, design)
    centred = design - mean_design[:, None, :]
    information = np.einsum("nj,njk,njl->kl", p, centred, centred)

    variances = np.full(len(names), np.nan)
    keep, scale = identified_columns(information)
    if keep.size:
        block = information[np.ix_(keep, keep)] / np.outer(scale[keep], scale[keep])
        variances[keep] = np.diag(linalg.inv(block)) / scale[keep] ** 2

    out: dict[str, dict[str, Any]] = {}
    for name, estimate, variance in zip(names, estimates, variances):
        if not np.isfinite(variance) or variance <= 0:
            out[name] = {"estimate": float(estimate), "std_error": None, "z": None, "p_value": None}
            continue
        se = math.sqrt(variance)
        z_value = float(estimate) / se
        out[name] = {
            "estimate": float(estimate),
            "std_error": se,
            "z": z_value,
            "p_value": float(2.0 * stats.norm.sf(abs(z_value))),
        }
    return out
