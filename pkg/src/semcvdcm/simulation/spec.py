from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Literal

import numpy as np

from semcvdcm.model.entities import (
    DEFAULT_REFERENCE_CLASS,
    PREDICTED_TARGETS,
    PROPORTION_ATTRIBUTES,
    PROPORTION_CLASSES,
    SEMANTIC_ATTRIBUTES,
)
from semcvdcm.model.storage import StorageError, read_json

Mixing = Literal["random", "identity"]
Sampler = Literal["probability", "gumbel"]

# Coefficients of a realistic housing-choice regime (cost and travel time in
# survey units, semantics as car counts and pixel proportions).
DEFAULT_TRUE_BETA_NUM: dict[str, float] = {"hhcost": -0.94, "tt": -0.24}
DEFAULT_TRUE_BETA_SEM: dict[str, float] = {
    "car_count": -0.25,
    "p_car": -0.59,
    "p_building": 0.0,
    "p_grass": 0.96,
    "p_road": -0.59,
    "p_sky": 1.42,
    "p_trees": 1.40,
    "p_plants": 1.05,
    "p_fence": -0.81,
    "p_water": 0.13,
    "unsegmented": -0.25,
}

DEFAULT_DIRICHLET_CONCENTRATION = 2.0
# Mean unsegmented share of an image.
DEFAULT_UNSEGMENTED_MEAN = 0.15
# Recovery runs draw sparse images dominated by one or two classes. Standard
# errors of the share coefficients grow with sqrt(total concentration + 1).
RECOVERY_DIRICHLET_CONCENTRATION = 0.05
RECOVERY_TEST_FRACTION = 0.1


def unsegmented_concentration(concentration: float, unsegmented_mean: float) -> float:
    """Dirichlet weight of the remainder so that its mean share is ``unsegmented_mean``."""
    classes = len(PROPORTION_CLASSES) * concentration
    return unsegmented_mean * classes / (1.0 - unsegmented_mean)


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground truth and generator settings of a synthetic stated-choice dataset."""

    n_observations: int = 10_000
    k: int = 16
    true_beta_num: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TRUE_BETA_NUM))
    true_beta_sem: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TRUE_BETA_SEM))
    reference_class: str = DEFAULT_REFERENCE_CLASS
    n_images: int | None = None
    dirichlet_concentration: float = DEFAULT_DIRICHLET_CONCENTRATION
    unsegmented_mean: float = DEFAULT_UNSEGMENTED_MEAN
    car_count_mean: float = 3.0
    mixing: Mixing = "random"
    sigma_z: float = 0.0
    numeric_ranges: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {"hhcost": (0.5, 2.5), "tt": (1.0, 6.0)}
    )
    test_fraction: float = 0.2
    n_zones: int = 20
    n_respondents: int | None = None
    sampler: Sampler = "probability"
    seed: int = 0

    @property
    def numeric_attributes(self) -> tuple[str, ...]:
        return tuple(self.true_beta_num)

    @property
    def image_count(self) -> int:
        return self.n_images if self.n_images is not None else 2 * self.n_observations

    def beta_num_array(self) -> np.ndarray:
        return np.array([self.true_beta_num[name] for name in self.numeric_attributes])

    def beta_sem_array(self) -> np.ndarray:
        return np.array([self.true_beta_sem[name] for name in SEMANTIC_ATTRIBUTES])

    def dirichlet_alpha(self) -> np.ndarray:
        alpha = np.full(len(PROPORTION_ATTRIBUTES), self.dirichlet_concentration)
        alpha[-1] = unsegmented_concentration(self.dirichlet_concentration, self.unsegmented_mean)
        return alpha

    def mixing_matrix(self) -> np.ndarray:
        """Encoder stand-in A (10 x K) mapping semantic targets to embeddings."""
        n_targets = len(PREDICTED_TARGETS)
        if self.mixing == "identity":
            matrix = np.zeros((n_targets, self.k))
            size = min(n_targets, self.k)
            matrix[:size, :size] = np.eye(size)
            return matrix
        rng = np.random.default_rng([self.seed, 100])
        return rng.normal(0.0, 1.0 / math.sqrt(n_targets), size=(n_targets, self.k))

    def with_overrides(self, **overrides: Any) -> SyntheticSpec:
        return replace(self, **{key: v for key, v in overrides.items() if v is not None})

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_observations": self.n_observations,
            "K": self.k,
            "true_beta_num": dict(self.true_beta_num),
            "true_beta_sem": dict(self.true_beta_sem),
            "reference_class": self.reference_class,
            "n_images": self.n_images,
            "dirichlet_concentration": self.dirichlet_concentration,
            "unsegmented_mean": self.unsegmented_mean,
            "car_count_mean": self.car_count_mean,
            "mixing": self.mixing,
            "sigma_z": self.sigma_z,
            "numeric_ranges": {name: list(bounds) for name, bounds in self.numeric_ranges.items()},
            "test_fraction": self.test_fraction,
            "n_zones": self.n_zones,
            "n_respondents": self.n_respondents,
            "sampler": self.sampler,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(
        cls, data: dict[str, Any] | None, base: SyntheticSpec | None = None
    ) -> SyntheticSpec:
        """Spec from a JSON object; missing keys come from ``base`` (default: class defaults)."""
        if not data:
            return base if base is not None else cls()
        values = dict(data)
        if "K" in values:
            values["k"] = values.pop("K")
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"Unknown synthetic spec options: {sorted(unknown)}")
        if "numeric_ranges" in values:
            values["numeric_ranges"] = {
                str(name): (float(bounds[0]), float(bounds[1]))
                for name, bounds in values["numeric_ranges"].items()
            }
        for key in ("true_beta_num", "true_beta_sem"):
            if key in values:
                values[key] = {str(name): float(v) for name, v in values[key].items()}
        return replace(base, **values) if base is not None else cls(**values)


def recovery_spec(**overrides: Any) -> SyntheticSpec:
    """Generator settings of the parameter recovery experiment."""
    spec = SyntheticSpec(
        dirichlet_concentration=RECOVERY_DIRICHLET_CONCENTRATION,
        test_fraction=RECOVERY_TEST_FRACTION,
    )
    return spec.with_overrides(**overrides)


def validate_synthetic_spec(spec: SyntheticSpec) -> list[str]:
    errors: list[str] = []
    if spec.n_observations < 1:
        errors.append("n_observations must be >= 1")
    if spec.k < 1:
        errors.append("K must be >= 1")
    if spec.image_count < 2:
        errors.append("At least two images are needed")
    if set(spec.true_beta_sem) != set(SEMANTIC_ATTRIBUTES):
        errors.append(f"true_beta_sem must name exactly {list(SEMANTIC_ATTRIBUTES)}")
    elif spec.reference_class not in PROPORTION_ATTRIBUTES:
        errors.append(f"Reference class must be one of {PROPORTION_ATTRIBUTES}")
    elif spec.true_beta_sem[spec.reference_class] != 0.0:
        errors.append(f"Reference class {spec.reference_class} must have coefficient 0")
    if set(spec.numeric_ranges) != set(spec.true_beta_num):
        errors.append("numeric_ranges must cover exactly the numeric attributes")
    for name, (low, high) in spec.numeric_ranges.items():
        if not low <= high:
            errors.append(f"Empty range for {name}: {low}..{high}")
    if spec.sigma_z < 0:
        errors.append("sigma_z must be >= 0")
    if spec.dirichlet_concentration <= 0:
        errors.append("dirichlet_concentration must be > 0")
    if not 0.0 < spec.unsegmented_mean < 1.0:
        errors.append("unsegmented_mean must be in (0, 1)")
    if spec.car_count_mean < 0:
        errors.append("car_count_mean must be >= 0")
    if spec.mixing not in ("random", "identity"):
        errors.append(f"Unknown mixing: {spec.mixing}")
    if spec.sampler not in ("probability", "gumbel"):
        errors.append(f"Unknown sampler: {spec.sampler}")
    if not 0.0 <= spec.test_fraction < 1.0:
        errors.append("test_fraction must be in [0, 1)")
    if spec.test_fraction > 0 and spec.image_count < 4:
        errors.append("An image-disjoint split needs at least four images")
    if spec.n_zones < 1:
        errors.append("n_zones must be >= 1")
    return errors


def assert_valid_synthetic_spec(spec: SyntheticSpec) -> None:
    errors = validate_synthetic_spec(spec)
    if errors:
        raise ValueError("Invalid synthetic spec:\n- " + "\n- ".join(errors))


def load_synthetic_spec(path: str, base: SyntheticSpec | None = None) -> SyntheticSpec:
    raw = read_json(path)
    if isinstance(raw, dict) and "spec" in raw:
        raw = raw["spec"]
    try:
        return SyntheticSpec.from_dict(raw, base)
    except (TypeError, ValueError, IndexError) as exc:
        raise StorageError(f"Malformed synthetic spec: {path}") from exc

