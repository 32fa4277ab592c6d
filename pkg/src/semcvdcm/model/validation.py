from __future__ import annotations

import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from .entities import (
    N_ALTERNATIVES,
    SEMANTIC_ATTRIBUTES,
    ChoiceObservation,
    DatasetSplit,
    SemanticVector,
    ZoneEntry,
)


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)
    missing_embeddings: list[str] = field(default_factory=list)
    missing_labels: list[str] = field(default_factory=list)
    unmapped_images: list[str] = field(default_factory=list)
    k: int | None = None
    m: int | None = None
    t: int = len(SEMANTIC_ATTRIBUTES)
    n: int = 0
    j: int = N_ALTERNATIVES
    n_images: int = 0
    trainable_phase1: bool = False
    trainable_phase2: bool = False
    trainable_phase3: bool = False

    @property
    def ok(self) -> bool:
        return not self.issues

    def to_dict(self) -> dict[str, Any]:
        return {
            "issues": list(self.issues),
            "missing_embeddings": list(self.missing_embeddings),
            "missing_labels": list(self.missing_labels),
            "unmapped_images": list(self.unmapped_images),
            "K": self.k,
            "M": self.m,
            "T": self.t,
            "N": self.n,
            "J": self.j,
            "n_images": self.n_images,
            "trainable_phase1": self.trainable_phase1,
            "trainable_phase2": self.trainable_phase2,
            "trainable_phase3": self.trainable_phase3,
        }


def validate_observations(observations: Sequence[ChoiceObservation]) -> list[str]:
    errors: list[str] = []

    counts = Counter(o.obs_id for o in observations)
    duplicate_ids = {oid for oid, count in counts.items() if count > 1}
    if duplicate_ids:
        errors.append(f"Duplicate observation ids: {sorted(duplicate_ids)[:10]}")

    attribute_counts = {len(alt.numeric_attrs) for obs in observations for alt in obs.alternatives}
    if len(attribute_counts) > 1:
        errors.append(f"Inconsistent numeric attribute counts: {sorted(attribute_counts)}")

    for obs in observations:
        if len(obs.alternatives) != N_ALTERNATIVES:
            errors.append(
                f"Observation {obs.obs_id} has {len(obs.alternatives)} alternatives, "
                f"expected {N_ALTERNATIVES}"
            )
        if not 0 <= obs.chosen < len(obs.alternatives):
            errors.append(f"Observation {obs.obs_id} has chosen index {obs.chosen} out of range")
        for alt in obs.alternatives:
            if not all(math.isfinite(value) for value in alt.numeric_attrs):
                errors.append(f"Observation {obs.obs_id} has a non-finite numeric attribute")
                break

    return errors


def validate_split(split: DatasetSplit, observations: Sequence[ChoiceObservation]) -> list[str]:
    errors: list[str] = []
    train_ids, test_ids = set(split.train), set(split.test)

    overlap = train_ids & test_ids
    if overlap:
        errors.append(f"Observations in both train and test: {sorted(overlap)[:10]}")

    by_id = {obs.obs_id: obs for obs in observations}
    unknown = sorted((train_ids | test_ids) - set(by_id))
    if unknown:
        errors.append(f"Split references unknown observations: {unknown[:10]}")

    train_images = {img for oid in train_ids if oid in by_id for img in by_id[oid].image_ids}
    test_images = {img for oid in test_ids if oid in by_id for img in by_id[oid].image_ids}
    shared = train_images & test_images
    if shared:
        errors.append(f"Images shared by train and test: {sorted(shared)[:10]}")

    return errors


def validate_dataset(
    observations: Sequence[ChoiceObservation],
    embeddings: Mapping[str, Any],
    labels: Mapping[str, SemanticVector] | None = None,
    zones: Mapping[str, ZoneEntry] | None = None,
    split: DatasetSplit | None = None,
) -> ValidationReport:
    report = ValidationReport(n=len(observations))
    report.issues.extend(validate_observations(observations))

    referenced = sorted({image_id for obs in observations for image_id in obs.image_ids})
    report.n_images = len(referenced)
    attribute_counts = {len(alt.numeric_attrs) for obs in observations for alt in obs.alternatives}
    report.m = attribute_counts.pop() if len(attribute_counts) == 1 else None
    report.k = getattr(embeddings, "k", None)

    report.missing_embeddings = [img for img in referenced if img not in embeddings]
    report.issues.extend(f"missing embedding: {img}" for img in report.missing_embeddings)

    if labels is not None:
        report.missing_labels = [img for img in referenced if img not in labels]
        report.issues.extend(f"missing label: {img}" for img in report.missing_labels)

    if zones is not None:
        report.unmapped_images = sorted(img for img in embeddings if img not in zones)

    if split is not None:
        report.issues.extend(validate_split(split, observations))

    structurally_ok = not validate_observations(observations) and bool(observations)
    report.trainable_phase2 = structurally_ok and not report.missing_embeddings
    report.trainable_phase3 = report.trainable_phase2
    report.trainable_phase1 = (
        report.trainable_phase2 and labels is not None and not report.missing_labels
    )
    return report


def assert_valid_dataset(report: ValidationReport) -> None:
    if report.issues:
        raise ValueError("Invalid dataset:\n- " + "\n- ".join(report.issues[:50]))
