from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .embeddings import EmbeddingStore, load_embeddings
from .entities import ChoiceObservation, DatasetSplit, Manifest, SemanticVector, ZoneEntry
from .storage import (
    StorageError,
    load_choice_data,
    load_manifest,
    load_semantic_labels,
    load_split,
    load_zone_map,
)
from .validation import ValidationReport, validate_dataset


@dataclass
class Dataset:
    manifest: Manifest
    observations: list[ChoiceObservation]
    embeddings: EmbeddingStore
    labels: dict[str, SemanticVector] | None = None
    zones: dict[str, ZoneEntry] | None = None
    split: DatasetSplit | None = None
    renormalised_labels: list[str] = field(default_factory=list)

    def subset(self, obs_ids: Sequence[str]) -> list[ChoiceObservation]:
        wanted = set(obs_ids)
        return [obs for obs in self.observations if obs.obs_id in wanted]

    def split_observations(self, name: str) -> list[ChoiceObservation]:
        if name == "all":
            return list(self.observations)
        if self.split is None:
            raise ValueError("Dataset has no split file")
        return self.subset(self.split.ids(name))

    def validate(self) -> ValidationReport:
        return validate_dataset(
            self.observations, self.embeddings, self.labels, self.zones, self.split
        )


def load_dataset(manifest_path: str | Path, with_choices: bool = True) -> Dataset:
    manifest = load_manifest(manifest_path)
    embeddings = load_embeddings(
        manifest.resolve(manifest.embeddings), manifest.resolve(manifest.embedding_index)
    )
    if manifest.k is not None and manifest.k != embeddings.k:
        raise StorageError(f"Manifest declares K={manifest.k}, embedding file has K={embeddings.k}")

    observations = load_choice_data(manifest.resolve(manifest.choices)) if with_choices else []

    labels = None
    renormalised: list[str] = []
    semantics_path = manifest.resolve(manifest.semantics)
    if semantics_path is not None and semantics_path.exists():
        label_set = load_semantic_labels(semantics_path)
        labels, renormalised = label_set.labels, label_set.renormalised

    zones_path = manifest.resolve(manifest.zones)
    zones = load_zone_map(zones_path) if zones_path is not None else None

    split_path = manifest.resolve(manifest.split)
    split = load_split(split_path) if split_path is not None and split_path.exists() else None

    return Dataset(
        manifest=manifest,
        observations=observations,
        embeddings=embeddings,
        labels=labels,
        zones=zones,
        split=split,
        renormalised_labels=renormalised,
    )
