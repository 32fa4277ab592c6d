"""Data model layer for semcvdcm."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np

PROPORTION_CLASSES: tuple[str, ...] = (
    "car",
    "building",
    "grass",
    "road",
    "sky",
    "trees",
    "plants",
    "fence",
    "water",
)
PROPORTION_COLUMNS: tuple[str, ...] = tuple(f"p_{name}" for name in PROPORTION_CLASSES)

# Order of beta_sem and of every per-attribute array in the package.
SEMANTIC_ATTRIBUTES: tuple[str, ...] = ("car_count", *PROPORTION_COLUMNS, "unsegmented")
# The head predicts everything except the derived remainder.
PREDICTED_TARGETS: tuple[str, ...] = SEMANTIC_ATTRIBUTES[:-1]
# Attributes measured as image shares; these sum to one per image.
PROPORTION_ATTRIBUTES: tuple[str, ...] = (*PROPORTION_COLUMNS, "unsegmented")

DEFAULT_REFERENCE_CLASS = "p_building"
DEFAULT_NUMERIC_ATTRIBUTES: tuple[str, ...] = ("hhcost", "tt")
RENORMALISE_TOLERANCE = 0.02
N_ALTERNATIVES = 2

SplitName = Literal["train", "test"]


@dataclass(frozen=True)
class SemanticVector:
    car_count: float = 0.0
    proportions: tuple[float, ...] = (0.0,) * len(PROPORTION_CLASSES)
    unsegmented: float = 1.0

    def to_array(self) -> np.ndarray:
        return np.array([self.car_count, *self.proportions, self.unsegmented], dtype=np.float64)

    def targets(self) -> np.ndarray:
        """The ten head targets: car count followed by the nine class proportions."""
        return np.array([self.car_count, *self.proportions], dtype=np.float64)

    @classmethod
    def from_array(cls, values: np.ndarray) -> SemanticVector:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(SEMANTIC_ATTRIBUTES),):
            raise ValueError(
                f"Semantic vector needs {len(SEMANTIC_ATTRIBUTES)} values, got {values.shape}"
            )
        return cls(
            car_count=float(values[0]),
            proportions=tuple(float(v) for v in values[1:-1]),
            unsegmented=float(values[-1]),
        )

    def to_dict(self) -> dict[str, float]:
        return dict(zip(SEMANTIC_ATTRIBUTES, (float(v) for v in self.to_array())))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SemanticVector:
        return cls.from_array(np.array([float(data[name]) for name in SEMANTIC_ATTRIBUTES]))


def derive_semantic_vector(
    car_count: float,
    proportions: tuple[float, ...] | list[float],
    tolerance: float = RENORMALISE_TOLERANCE,
) -> tuple[SemanticVector, bool]:
    """Build a SemanticVector from raw label values.

    Returns the vector and whether the proportions had to be renormalised
    (their sum was in (1, 1 + tolerance]).
    """
    values = [float(p) for p in proportions]
    if len(values) != len(PROPORTION_CLASSES):
        raise ValueError(f"Expected {len(PROPORTION_CLASSES)} proportions, got {len(values)}")
    if not all(math.isfinite(v) for v in values) or not math.isfinite(float(car_count)):
        raise ValueError("Semantic label contains a non-finite value")
    if car_count < 0:
        raise ValueError(f"Negative car_count: {car_count}")
    negative = [name for name, v in zip(PROPORTION_COLUMNS, values) if v < 0]
    if negative:
        raise ValueError(f"Negative proportion for {', '.join(negative)}")

    total = math.fsum(values)
    renormalised = False
    if total > 1.0 + tolerance:
        raise ValueError(f"Proportions sum to {total:.6f} > 1 + {tolerance}")
    if total > 1.0:
        values = [v / total for v in values]
        total = math.fsum(values)
        renormalised = True

    unsegmented = max(0.0, 1.0 - total)
    vector = SemanticVector(
        car_count=float(car_count),
        proportions=tuple(values),
        unsegmented=unsegmented,
    )
    return vector, renormalised


@dataclass(frozen=True)
class Embedding:
    image_id: str
    values: np.ndarray


@dataclass(frozen=True)
class Alternative:
    alt_id: int
    image_id: str
    numeric_attrs: tuple[float, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "alt_id": int(self.alt_id),
            "image_id": self.image_id,
            "numeric_attrs": [float(v) for v in self.numeric_attrs],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Alternative:
        return cls(
            alt_id=int(data["alt_id"]),
            image_id=str(data["image_id"]),
            numeric_attrs=tuple(float(v) for v in data.get("numeric_attrs", [])),
        )


@dataclass(frozen=True)
class ChoiceObservation:
    obs_id: str
    respondent_id: str
    alternatives: tuple[Alternative, ...]
    chosen: int

    @property
    def image_ids(self) -> tuple[str, ...]:
        return tuple(alt.image_id for alt in self.alternatives)

    def to_dict(self) -> dict[str, Any]:
        return {
            "obs_id": self.obs_id,
            "respondent_id": self.respondent_id,
            "alternatives": [alt.to_dict() for alt in self.alternatives],
            "chosen": int(self.chosen),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ChoiceObservation:
        return cls(
            obs_id=str(data["obs_id"]),
            respondent_id=str(data.get("respondent_id") or ""),
            alternatives=tuple(Alternative.from_dict(item) for item in data["alternatives"]),
            chosen=int(data["chosen"]),
        )


@dataclass(frozen=True)
class ZoneEntry:
    image_id: str
    zone_id: str
    lon: float | None = None
    lat: float | None = None


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...] = ()
    test: tuple[str, ...] = ()

    def ids(self, name: SplitName) -> tuple[str, ...]:
        if name == "train":
            return self.train
        if name == "test":
            return self.test
        raise ValueError(f"Unknown split: {name}")

    def to_dict(self) -> dict[str, list[str]]:
        return {"train": list(self.train), "test": list(self.test)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DatasetSplit:
        return cls(
            train=tuple(str(v) for v in data.get("train", [])),
            test=tuple(str(v) for v in data.get("test", [])),
        )


@dataclass
class Manifest:
    root: Path = field(default_factory=Path)
    choices: str = "choices.csv"
    embeddings: str = "embeddings.bin"
    embedding_index: str = "embeddings.idx.csv"
    semantics: str | None = "semantics.csv"
    zones: str | None = None
    split: str | None = "split.csv"
    k: int | None = None
    numeric_attributes: tuple[str, ...] = DEFAULT_NUMERIC_ATTRIBUTES
    units: dict[str, str] = field(default_factory=dict)

    def resolve(self, relative: str | None) -> Path | None:
        if relative is None:
            return None
        path = Path(relative)
        if path.is_absolute():
            return path
        return self.root / path

    def to_dict(self) -> dict[str, Any]:
        return {
            "choices": self.choices,
            "embeddings": self.embeddings,
            "embedding_index": self.embedding_index,
            "semantics": self.semantics,
            "zones": self.zones,
            "split": self.split,
            "K": self.k,
            "numeric_attributes": list(self.numeric_attributes),
            "units": dict(self.units),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], root: Path | None = None) -> Manifest:
        k = data.get("K")
        return cls(
            root=root or Path("."),
            choices=str(data.get("choices", "choices.csv")),
            embeddings=str(data.get("embeddings", "embeddings.bin")),
            embedding_index=str(data.get("embedding_index", "embeddings.idx.csv")),
            semantics=data.get("semantics"),
            zones=data.get("zones"),
            split=data.get("split"),
            k=int(k) if k is not None else None,
            numeric_attributes=tuple(
                str(v) for v in data.get("numeric_attributes", DEFAULT_NUMERIC_ATTRIBUTES)
            ),
            units={str(key): str(value) for key, value in (data.get("units") or {}).items()},
        )
