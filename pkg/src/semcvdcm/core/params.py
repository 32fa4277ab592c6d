from __future__ import annotations

import hashlib
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from semcvdcm.model.entities import (
    DEFAULT_NUMERIC_ATTRIBUTES,
    DEFAULT_REFERENCE_CLASS,
    PREDICTED_TARGETS,
    PROPORTION_ATTRIBUTES,
    SEMANTIC_ATTRIBUTES,
)
from semcvdcm.model.storage import StorageError, read_json, write_json

MODEL_FORMAT = "semcvdcm-model"
MODEL_VERSION = 1

PARAMETER_GROUPS: tuple[str, ...] = ("head", "beta_num", "beta_sem", "beta_res")
HEAD_ARRAYS: tuple[str, ...] = ("head_weights", "head_bias", "hidden_weights", "hidden_bias")


@dataclass
class ModelParams:
    """All coefficients of the semantic choice model.

    Treated as an immutable value: training produces new instances via ``replace``.
    With ``hidden_units > 0`` the head is ``tanh(z @ hidden_weights + hidden_bias)``
    followed by the affine ``head_weights``/``head_bias`` layer.
    """

    beta_num: np.ndarray
    beta_sem: np.ndarray
    fixed_sem: np.ndarray
    head_weights: np.ndarray
    head_bias: np.ndarray
    beta_res: np.ndarray
    hidden_weights: np.ndarray | None = None
    hidden_bias: np.ndarray | None = None
    rmse_weights: np.ndarray = field(default_factory=lambda: np.ones(len(PREDICTED_TARGETS)))
    reference_class: str = DEFAULT_REFERENCE_CLASS
    numeric_attributes: tuple[str, ...] = DEFAULT_NUMERIC_ATTRIBUTES
    units: dict[str, str] = field(default_factory=dict)
    seed: int = 0
    history: list[dict[str, Any]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return int(self.beta_res.shape[0])

    @property
    def m(self) -> int:
        return int(self.beta_num.shape[0])

    @property
    def t(self) -> int:
        return int(self.beta_sem.shape[0])

    @property
    def hidden_units(self) -> int:
        return 0 if self.hidden_weights is None else int(self.hidden_weights.shape[1])

    def arrays(self) -> dict[str, np.ndarray]:
        out = {
            "head_weights": self.head_weights,
            "head_bias": self.head_bias,
            "beta_num": self.beta_num,
            "beta_sem": self.beta_sem,
            "beta_res": self.beta_res,
        }
        if self.hidden_weights is not None and self.hidden_bias is not None:
            out["hidden_weights"] = self.hidden_weights
            out["hidden_bias"] = self.hidden_bias
        return out

    def group_of(self, name: str) -> str:
        return "head" if name in HEAD_ARRAYS else name

    def group_arrays(self, group: str) -> dict[str, np.ndarray]:
        return {name: arr for name, arr in self.arrays().items() if self.group_of(name) == group}

    def free_mask(self, name: str) -> np.ndarray:
        """Entries that may change when their group is trainable."""
        if name == "beta_sem":
            return ~self.fixed_sem
        return np.ones(self.arrays()[name].shape, dtype=bool)

    def checksum(self, group: str) -> str:
        digest = hashlib.sha256()
        for name, arr in sorted(self.group_arrays(group).items()):
            digest.update(name.encode("ascii"))
            digest.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return digest.hexdigest()

    def checksums(self) -> dict[str, str]:
        return {group: self.checksum(group) for group in PARAMETER_GROUPS}

    def replace(self, **arrays: np.ndarray) -> ModelParams:
        values = {
            "beta_num": self.beta_num,
            "beta_sem": self.beta_sem,
            "fixed_sem": self.fixed_sem,
            "head_weights": self.head_weights,
            "head_bias": self.head_bias,
            "beta_res": self.beta_res,
            "hidden_weights": self.hidden_weights,
            "hidden_bias": self.hidden_bias,
            "rmse_weights": self.rmse_weights,
        }
        unknown = set(arrays) - set(values)
        if unknown:
            raise ValueError(f"Unknown parameter arrays: {sorted(unknown)}")
        values.update(arrays)
        return ModelParams(
            **values,
            reference_class=self.reference_class,
            numeric_attributes=self.numeric_attributes,
            units=dict(self.units),
            seed=self.seed,
            history=list(self.history),
        )

    def copy(self) -> ModelParams:
        return self.replace(
            **{name: np.array(arr, copy=True) for name, arr in self.arrays().items()},
            fixed_sem=self.fixed_sem.copy(),
            rmse_weights=self.rmse_weights.copy(),
        )

    def to_dict(self) -> dict[str, Any]:
        head: dict[str, Any] = {
            "hidden_units": self.hidden_units,
            "weights": self.head_weights.tolist(),
            "bias": self.head_bias.tolist(),
        }
        if self.hidden_weights is not None and self.hidden_bias is not None:
            head["hidden_weights"] = self.hidden_weights.tolist()
            head["hidden_bias"] = self.hidden_bias.tolist()
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "K": self.k,
            "M": self.m,
            "T": self.t,
            "reference_class": self.reference_class,
            "numeric_attributes": list(self.numeric_attributes),
            "units": dict(self.units),
            "beta_num": dict(zip(self.numeric_attributes, self.beta_num.tolist())),
            "beta_sem": dict(zip(SEMANTIC_ATTRIBUTES, self.beta_sem.tolist())),
            "fixed_sem": dict(zip(SEMANTIC_ATTRIBUTES, (bool(v) for v in self.fixed_sem))),
            "rmse_weights": dict(zip(PREDICTED_TARGETS, self.rmse_weights.tolist())),
            "head": head,
            "beta_res": self.beta_res.tolist(),
            "seed": int(self.seed),
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelParams:
        if data.get("format") != MODEL_FORMAT:
            raise ValueError(f"Not a model file (format={data.get('format')!r})")
        numeric = tuple(str(name) for name in data["numeric_attributes"])
        head = data["head"]
        hidden = int(head.get("hidden_units", 0))
        return cls(
            beta_num=np.array([float(data["beta_num"][name]) for name in numeric]),
            beta_sem=np.array([float(data["beta_sem"][name]) for name in SEMANTIC_ATTRIBUTES]),
            fixed_sem=np.array([bool(data["fixed_sem"][name]) for name in SEMANTIC_ATTRIBUTES]),
            head_weights=np.array(head["weights"], dtype=np.float64),
            head_bias=np.array(head["bias"], dtype=np.float64),
            hidden_weights=np.array(head["hidden_weights"], dtype=np.float64) if hidden else None,
            hidden_bias=np.array(head["hidden_bias"], dtype=np.float64) if hidden else None,
            beta_res=np.array(data["beta_res"], dtype=np.float64),
            rmse_weights=np.array(
                [float(data["rmse_weights"][name]) for name in PREDICTED_TARGETS]
            ),
            reference_class=str(data["reference_class"]),
            numeric_attributes=numeric,
            units={str(k): str(v) for k, v in (data.get("units") or {}).items()},
            seed=int(data.get("seed", 0)),
            history=list(data.get("history") or []),
        )


def init_params(
    k: int,
    m: int,
    seed: int = 0,
    reference_class: str = DEFAULT_REFERENCE_CLASS,
    hidden_units: int = 0,
    rmse_weights: Iterable[float] | None = None,
    numeric_attributes: Iterable[str] | None = None,
    units: Mapping[str, str] | None = None,
) -> ModelParams:
    """Starting point for training: zero utilities, small seeded uniform head."""
    if reference_class not in PROPORTION_ATTRIBUTES:
        raise ValueError(f"Reference class must be one of {PROPORTION_ATTRIBUTES}")
    if k < 1 or m < 0:
        raise ValueError(f"Invalid dimensions K={k}, M={m}")
    numeric = tuple(numeric_attributes) if numeric_attributes is not None else None
    if numeric is None:
        numeric = DEFAULT_NUMERIC_ATTRIBUTES if m == len(DEFAULT_NUMERIC_ATTRIBUTES) else tuple(
            f"x{index}" for index in range(m)
        )
    if len(numeric) != m:
        raise ValueError(f"{len(numeric)} numeric attribute names for M={m}")

    rng = np.random.default_rng(seed)
    n_targets = len(PREDICTED_TARGETS)
    if hidden_units:
        hidden_weights = rng.uniform(-0.01, 0.01, size=(k, hidden_units))
        hidden_bias = np.zeros(hidden_units)
        head_weights = rng.uniform(-0.01, 0.01, size=(hidden_units, n_targets))
    else:
        hidden_weights = hidden_bias = None
        head_weights = rng.uniform(-0.01, 0.01, size=(k, n_targets))

    fixed = np.zeros(len(SEMANTIC_ATTRIBUTES), dtype=bool)
    fixed[SEMANTIC_ATTRIBUTES.index(reference_class)] = True
    if rmse_weights is None:
        weights = np.ones(n_targets)
    else:
        weights = np.array(list(rmse_weights), dtype=float)
    return ModelParams(
        beta_num=np.zeros(m),
        beta_sem=np.zeros(len(SEMANTIC_ATTRIBUTES)),
        fixed_sem=fixed,
        head_weights=head_weights,
        head_bias=np.zeros(n_targets),
        beta_res=np.zeros(k),
        hidden_weights=hidden_weights,
        hidden_bias=hidden_bias,
        rmse_weights=weights,
        reference_class=reference_class,
        numeric_attributes=numeric,
        units=dict(units or {}),
        seed=seed,
    )


def validate_params(params: ModelParams) -> list[str]:
    errors: list[str] = []
    t = len(SEMANTIC_ATTRIBUTES)
    n_targets = len(PREDICTED_TARGETS)

    if params.beta_sem.shape != (t,):
        errors.append(f"beta_sem must have {t} entries, has {params.beta_sem.shape}")
    if params.fixed_sem.shape != (t,):
        errors.append(f"fixed_sem must have {t} entries, has {params.fixed_sem.shape}")
    if params.rmse_weights.shape != (n_targets,):
        errors.append(f"rmse_weights must have {n_targets} entries")
    elif (params.rmse_weights < 0).any():
        errors.append("rmse_weights must be non-negative")
    if params.head_bias.shape != (n_targets,):
        errors.append(f"head_bias must have {n_targets} entries")
    head_in = params.hidden_units or params.k
    if params.head_weights.shape != (head_in, n_targets):
        errors.append(f"head_weights must be {head_in}x{n_targets}, is {params.head_weights.shape}")
    if params.hidden_weights is not None and params.hidden_weights.shape[0] != params.k:
        errors.append("hidden_weights rows must equal K")
    if len(params.numeric_attributes) != params.m:
        errors.append("numeric_attributes does not match beta_num")

    for name, arr in params.arrays().items():
        if not np.isfinite(arr).all():
            errors.append(f"{name} contains non-finite values")

    if params.reference_class not in PROPORTION_ATTRIBUTES:
        errors.append(f"Reference class {params.reference_class!r} is not a proportion attribute")
    elif not errors:
        ref = SEMANTIC_ATTRIBUTES.index(params.reference_class)
        if not params.fixed_sem[ref]:
            errors.append(f"Reference class {params.reference_class} must be fixed")
        if params.beta_sem[ref] != 0.0:
            errors.append(f"Reference class {params.reference_class} must be exactly 0")
        proportion_idx = [SEMANTIC_ATTRIBUTES.index(name) for name in PROPORTION_ATTRIBUTES]
        fixed_zero = [
            i for i in proportion_idx if params.fixed_sem[i] and params.beta_sem[i] == 0.0
        ]
        any_free = any(not params.fixed_sem[i] for i in proportion_idx)
        if any_free and len(fixed_zero) != 1:
            errors.append("Exactly one proportion coefficient must be fixed at zero")

    return errors


def assert_valid_params(params: ModelParams) -> None:
    errors = validate_params(params)
    if errors:
        raise ValueError("Invalid model parameters:\n- " + "\n- ".join(errors))


def save_params(
    params: ModelParams,
    path: str | Path,
    config: Mapping[str, Any] | None = None,
) -> None:
    assert_valid_params(params)
    payload = params.to_dict()
    if config is not None:
        payload["config"] = dict(config)
    write_json(payload, path)


def load_params(path: str | Path) -> ModelParams:
    raw = read_json(path)
    try:
        params = ModelParams.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise StorageError(f"Model file is malformed: {path}") from exc
    errors = validate_params(params)
    if errors:
        raise StorageError("Model file is invalid:\n- " + "\n- ".join(errors))
    return params


def l2_norm(arrays: Iterable[np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.dot(a.ravel(), a.ravel())) for a in arrays))
