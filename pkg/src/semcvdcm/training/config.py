from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any, Literal

from semcvdcm.core.params import PARAMETER_GROUPS
from semcvdcm.model.entities import DEFAULT_REFERENCE_CLASS, PREDICTED_TARGETS

Optimizer = Literal["sgd", "lbfgs"]

DEFAULT_PHASE_GROUPS: tuple[tuple[str, ...], ...] = (
    ("head",),
    ("beta_num", "beta_sem"),
    ("beta_res",),
)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 10
    learning_rate: float = 5e-5
    l2_lambda: float = 0.1
    l2_groups: tuple[str, ...] = PARAMETER_GROUPS
    kappa: tuple[float, float, float] = (1.0, 0.0, 0.0)
    max_epochs: tuple[int, int, int] = (500, 500, 500)
    patience: int = 20
    min_delta: float = 1e-6
    ll_tolerance: float = 1e-6
    validation_fraction: float = 0.1
    seed: int = 0
    optimizer: Optimizer = "sgd"
    phase_groups: tuple[tuple[str, ...], ...] = DEFAULT_PHASE_GROUPS
    hidden_units: int = 0
    reference_class: str = DEFAULT_REFERENCE_CLASS
    rmse_weights: tuple[float, ...] = (1.0,) * len(PREDICTED_TARGETS)
    benchmark: bool = False

    def with_overrides(self, **overrides: Any) -> TrainConfig:
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"Unknown training options: {sorted(unknown)}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict[str, Any]:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "l2_lambda": self.l2_lambda,
            "l2_groups": list(self.l2_groups),
            "kappa": list(self.kappa),
            "max_epochs": list(self.max_epochs),
            "patience": self.patience,
            "min_delta": self.min_delta,
            "ll_tolerance": self.ll_tolerance,
            "validation_fraction": self.validation_fraction,
            "seed": self.seed,
            "optimizer": self.optimizer,
            "phase_groups": [list(groups) for groups in self.phase_groups],
            "hidden_units": self.hidden_units,
            "reference_class": self.reference_class,
            "rmse_weights": list(self.rmse_weights),
            "benchmark": self.benchmark,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> TrainConfig:
        if not data:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown training options: {sorted(unknown)}")
        values: dict[str, Any] = dict(data)
        for key in ("l2_groups", "rmse_weights"):
            if key in values:
                values[key] = tuple(values[key])
        if "kappa" in values:
            values["kappa"] = _per_phase(values["kappa"], float)
        if "max_epochs" in values:
            values["max_epochs"] = _per_phase(values["max_epochs"], int)
        if "phase_groups" in values:
            values["phase_groups"] = tuple(tuple(groups) for groups in values["phase_groups"])
        return cls(**values)


def _per_phase(value: Any, cast: type) -> tuple[Any, Any, Any]:
    if isinstance(value, (list, tuple)):
        if len(value) != 3:
            raise ValueError(f"Expected three per-phase values, got {value}")
        return tuple(cast(v) for v in value)  # type: ignore[return-value]
    return (cast(value),) * 3  # type: ignore[return-value]


def validate_config(config: TrainConfig) -> list[str]:
    errors: list[str] = []
    if config.batch_size < 1:
        errors.append(f"batch_size must be >= 1, got {config.batch_size}")
    if not config.learning_rate > 0:
        errors.append(f"learning_rate must be > 0, got {config.learning_rate}")
    if config.l2_lambda < 0:
        errors.append(f"l2_lambda must be >= 0, got {config.l2_lambda}")
    if len(config.kappa) != 3 or any(not 0.0 <= k <= 1.0 for k in config.kappa):
        errors.append(f"kappa must be three values in [0, 1], got {config.kappa}")
    if len(config.max_epochs) != 3 or any(e < 0 for e in config.max_epochs):
        errors.append(f"max_epochs must be three non-negative counts, got {config.max_epochs}")
    if config.patience < 1:
        errors.append("patience must be >= 1")
    if not 0.0 <= config.validation_fraction < 1.0:
        errors.append("validation_fraction must be in [0, 1)")
    if config.optimizer not in ("sgd", "lbfgs"):
        errors.append(f"Unknown optimizer: {config.optimizer}")
    if len(config.phase_groups) != 3:
        errors.append("phase_groups must list the trainable groups of three phases")
    for groups in (*config.phase_groups, config.l2_groups):
        unknown = set(groups) - set(PARAMETER_GROUPS)
        if unknown:
            errors.append(f"Unknown parameter groups: {sorted(unknown)}")
    if config.hidden_units < 0:
        errors.append("hidden_units must be >= 0")
    if len(config.rmse_weights) != len(PREDICTED_TARGETS) or any(
        w < 0 for w in config.rmse_weights
    ):
        errors.append(f"rmse_weights must be {len(PREDICTED_TARGETS)} non-negative values")
    return errors


def assert_valid_config(config: TrainConfig) -> None:
    errors = validate_config(config)
    if errors:
        raise ValueError("Invalid training config:\n- " + "\n- ".join(errors))


@dataclass
class PhaseResult:
    phase: str
    epochs_run: int = 0
    train_components: dict[str, float | None] = field(default_factory=dict)
    validation_components: dict[str, float | None] = field(default_factory=dict)
    wall_time: float = 0.0
    checksums_before: dict[str, str] = field(default_factory=dict)
    checksums_after: dict[str, str] = field(default_factory=dict)
    trainable_groups: tuple[str, ...] = ()
    stop_reason: str = "max_epochs"

    @property
    def frozen_groups_intact(self) -> bool:
        return all(
            self.checksums_before[group] == self.checksums_after[group]
            for group in self.checksums_before
            if group not in self.trainable_groups
        )

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "phase": self.phase,
            "epochs_run": self.epochs_run,
            "train": dict(self.train_components),
            "validation": dict(self.validation_components),
            "trainable_groups": list(self.trainable_groups),
            "checksums_before": dict(self.checksums_before),
            "checksums_after": dict(self.checksums_after),
            "frozen_groups_intact": self.frozen_groups_intact,
            "stop_reason": self.stop_reason,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out
