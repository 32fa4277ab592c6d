from __future__ import annotations

import pytest

from semcvdcm.model.entities import Alternative, ChoiceObservation, DatasetSplit
from semcvdcm.model.validation import (
    assert_valid_dataset,
    validate_dataset,
    validate_observations,
    validate_split,
)
from semcvdcm.simulation.simulator import SyntheticDataset


def _observation(obs_id: str, first: str, second: str, chosen: int = 0) -> ChoiceObservation:
    return ChoiceObservation(
        obs_id=obs_id,
        respondent_id="r1",
        alternatives=(Alternative(0, first, (1.0, 2.0)), Alternative(1, second, (2.0, 1.0))),
        chosen=chosen,
    )


def test_consistent_synthetic_dataset_has_no_issues(small_synthetic: SyntheticDataset) -> None:
    report = small_synthetic.to_dataset().validate()

    assert report.ok
    assert report.k == 12
    assert report.m == 2
    assert report.n == 300
    assert report.trainable_phase1
    assert report.trainable_phase2
    assert report.trainable_phase3
    assert_valid_dataset(report)


def test_missing_embedding_is_reported(small_synthetic: SyntheticDataset) -> None:
    observations = list(small_synthetic.observations)
    observations[0] = _observation("obs_extra", "img_unknown", observations[0].image_ids[1])

    report = validate_dataset(observations, small_synthetic.embeddings, small_synthetic.labels)

    assert "missing embedding: img_unknown" in report.issues
    assert report.missing_embeddings == ["img_unknown"]
    assert not report.trainable_phase2
    with pytest.raises(ValueError, match="missing embedding"):
        assert_valid_dataset(report)


def test_partial_labels_only_block_semantic_pretraining(small_synthetic: SyntheticDataset) -> None:
    referenced = sorted({img for obs in small_synthetic.observations for img in obs.image_ids})
    dropped = set(referenced[: len(referenced) // 10 + 1])
    labels = {img: v for img, v in small_synthetic.labels.items() if img not in dropped}

    report = validate_dataset(small_synthetic.observations, small_synthetic.embeddings, labels)

    assert len(report.missing_labels) == len(dropped)
    assert not report.trainable_phase1
    assert report.trainable_phase2
    assert report.trainable_phase3


def test_unmapped_images_are_listed_but_not_issues(small_synthetic: SyntheticDataset) -> None:
    zones = dict(small_synthetic.zones)
    removed = sorted(zones)[0]
    del zones[removed]

    report = validate_dataset(
        small_synthetic.observations, small_synthetic.embeddings, small_synthetic.labels, zones
    )

    assert report.unmapped_images == [removed]
    assert report.ok


def test_observation_checks() -> None:
    observations = [
        _observation("o1", "a", "b"),
        _observation("o1", "c", "d"),
        _observation("o2", "e", "f", chosen=2),
    ]

    errors = validate_observations(observations)

    assert any("Duplicate observation ids" in error for error in errors)
    assert any("chosen index 2" in error for error in errors)


def test_split_must_be_image_disjoint() -> None:
    observations = [_observation("o1", "a", "b"), _observation("o2", "b", "c")]

    errors = validate_split(DatasetSplit(train=("o1",), test=("o2",)), observations)

    assert errors == ["Images shared by train and test: ['b']"]


def test_split_overlap_and_unknown_ids() -> None:
    observations = [_observation("o1", "a", "b")]

    errors = validate_split(DatasetSplit(train=("o1",), test=("o1", "o9")), observations)

    assert any("both train and test" in error for error in errors)
    assert any("unknown observations" in error for error in errors)
