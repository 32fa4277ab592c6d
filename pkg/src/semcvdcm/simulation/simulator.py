from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from semcvdcm.core.utility import LOG_PROBABILITY_FLOOR, choice_probabilities
from semcvdcm.model.dataset import Dataset
from semcvdcm.model.embeddings import FLOAT_DTYPE, EmbeddingStore, write_embeddings
from semcvdcm.model.entities import (
    N_ALTERNATIVES,
    PREDICTED_TARGETS,
    Alternative,
    ChoiceObservation,
    DatasetSplit,
    Manifest,
    SemanticVector,
    ZoneEntry,
    derive_semantic_vector,
)
from semcvdcm.model.storage import (
    write_choice_data,
    write_json,
    write_manifest,
    write_semantic_labels,
    write_split,
    write_zone_map,
)

from .spec import Sampler, SyntheticSpec, assert_valid_synthetic_spec

logger = logging.getLogger(__name__)

# Independent random streams derived from SyntheticSpec.seed.
SEMANTICS_STREAM = 1
EMBEDDING_STREAM = 2
CHOICE_STREAM = 3
SPLIT_STREAM = 4
ZONE_STREAM = 5

# Bounding box the synthetic zones are scattered over (lon/lat degrees).
ZONE_EXTENT = ((4.40, 4.60), (51.85, 51.98))


def _rng(spec: SyntheticSpec, stream: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, stream])


def _image_ids(count: int, prefix: str = "img") -> list[str]:
    width = max(6, len(str(count)))
    return [f"{prefix}{index:0{width}d}" for index in range(count)]


def simulate_semantics(
    spec: SyntheticSpec,
    n_images: int | None = None,
) -> tuple[list[str], dict[str, SemanticVector]]:
    """Draw semantic labels: Dirichlet shares (remainder = unsegmented) and Poisson car counts."""
    count = spec.image_count if n_images is None else n_images
    rng = _rng(spec, SEMANTICS_STREAM)
    shares = rng.dirichlet(spec.dirichlet_alpha(), size=count)
    cars = rng.poisson(spec.car_count_mean, size=count)
    image_ids = _image_ids(count)
    labels: dict[str, SemanticVector] = {}
    for image_id, car_count, row in zip(image_ids, cars, shares):
        labels[image_id], _ = derive_semantic_vector(float(car_count), row[:-1].tolist())
    return image_ids, labels


def _target_matrix(image_ids: Sequence[str], labels: Mapping[str, SemanticVector]) -> np.ndarray:
    return np.vstack([labels[image_id].targets() for image_id in image_ids])


def mixing_is_rank_deficient(spec: SyntheticSpec) -> bool:
    return int(np.linalg.matrix_rank(spec.mixing_matrix())) < len(PREDICTED_TARGETS)


def simulate_embeddings(
    spec: SyntheticSpec,
    labels: Mapping[str, SemanticVector],
) -> EmbeddingStore:
    """z = targets @ A + N(0, sigma_z), stored at float32 precision.

    With sigma_z = 0 the targets are linearly decodable from z only when A
    has full row rank; a rank-deficient A is logged as a warning.
    """
    image_ids = sorted(labels)
    matrix = _target_matrix(image_ids, labels) @ spec.mixing_matrix()
    if spec.sigma_z > 0:
        matrix = matrix + _rng(spec, EMBEDDING_STREAM).normal(0.0, spec.sigma_z, size=matrix.shape)
    elif mixing_is_rank_deficient(spec):
        logger.warning(
            "Mixing matrix has rank < %d with sigma_z=0: semantics are not decodable from K=%d",
            len(PREDICTED_TARGETS),
            spec.k,
        )
    stored = np.ascontiguousarray(matrix, dtype=FLOAT_DTYPE)
    return EmbeddingStore(stored, {image_id: row for row, image_id in enumerate(image_ids)})


def sample_choices(
    utilities: np.ndarray,
    rng: np.random.Generator,
    sampler: Sampler = "probability",
) -> np.ndarray:
    """Chosen alternative per row of an (N, J) utility matrix.

    ``probability`` inverts the logit CDF with one uniform draw per row;
    ``gumbel`` adds i.i.d. Gumbel(0, 1) errors and takes the argmax.
    """
    utilities = np.atleast_2d(np.asarray(utilities, dtype=np.float64))
    if sampler == "gumbel":
        return np.argmax(utilities + rng.gumbel(size=utilities.shape), axis=1)
    if sampler != "probability":
        raise ValueError(f"Unknown sampler: {sampler}")
    cumulative = np.cumsum(choice_probabilities(utilities), axis=1)
    draws = rng.random(utilities.shape[0])[:, None]
    return np.minimum((draws >= cumulative).sum(axis=1), utilities.shape[1] - 1)


def true_utilities(
    spec: SyntheticSpec,
    x: np.ndarray,
    semantics: np.ndarray,
) -> np.ndarray:
    """V = beta_num . x + beta_sem . s with no residual term; x is (N, J, M), s is (N, J, 11)."""
    return x @ spec.beta_num_array() + semantics @ spec.beta_sem_array()


def _draw_numeric(spec: SyntheticSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    columns = [
        rng.uniform(*spec.numeric_ranges[name], size=(n, N_ALTERNATIVES))
        for name in spec.numeric_attributes
    ]
    return np.stack(columns, axis=2) if columns else np.zeros((n, N_ALTERNATIVES, 0))


def simulate_choices(
    spec: SyntheticSpec,
    image_ids: Sequence[str],
    labels: Mapping[str, SemanticVector],
    n_observations: int | None = None,
    obs_offset: int = 0,
    rng: np.random.Generator | None = None,
) -> list[ChoiceObservation]:
    """Pair two distinct images per observation and draw the choice from the true logit model."""
    if len(image_ids) < N_ALTERNATIVES:
        raise ValueError("Simulating choices needs at least two images")
    n = spec.n_observations if n_observations is None else n_observations
    rng = rng if rng is not None else _rng(spec, CHOICE_STREAM)
    pool = np.asarray(image_ids)
    first = rng.integers(0, len(pool), size=n)
    second = (first + rng.integers(1, len(pool), size=n)) % len(pool)
    picks = np.column_stack([first, second])
    x = _draw_numeric(spec, rng, n)
    semantic_table = np.vstack([labels[image_id].to_array() for image_id in image_ids])
    chosen = sample_choices(true_utilities(spec, x, semantic_table[picks]), rng, spec.sampler)

    per_respondent = 10
    if spec.n_respondents:
        per_respondent = max(1, math.ceil(spec.n_observations / spec.n_respondents))
    observations: list[ChoiceObservation] = []
    for row in range(n):
        index = obs_offset + row
        alternatives = tuple(
            Alternative(
                alt_id=alt,
                image_id=str(pool[picks[row, alt]]),
                numeric_attrs=tuple(float(v) for v in x[row, alt]),
            )
            for alt in range(N_ALTERNATIVES)
        )
        observations.append(
            ChoiceObservation(
                obs_id=f"obs{index:07d}",
                respondent_id=f"resp{index // per_respondent:06d}",
                alternatives=alternatives,
                chosen=int(chosen[row]),
            )
        )
    return observations


def simulate_zones(spec: SyntheticSpec, image_ids: Sequence[str]) -> dict[str, ZoneEntry]:
    rng = _rng(spec, ZONE_STREAM)
    (lon_low, lon_high), (lat_low, lat_high) = ZONE_EXTENT
    centres = np.column_stack(
        [
            rng.uniform(lon_low, lon_high, size=spec.n_zones),
            rng.uniform(lat_low, lat_high, size=spec.n_zones),
        ]
    )
    assignment = rng.integers(0, spec.n_zones, size=len(image_ids))
    jitter = rng.normal(0.0, 0.002, size=(len(image_ids), 2))
    width = max(3, len(str(spec.n_zones)))
    zones: dict[str, ZoneEntry] = {}
    for image_id, zone, offset in zip(image_ids, assignment, jitter):
        lon, lat = centres[zone] + offset
        zones[image_id] = ZoneEntry(
            image_id=image_id,
            zone_id=f"Z{zone:0{width}d}",
            lon=round(float(lon), 6),
            lat=round(float(lat), 6),
        )
    return zones


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    image_ids: list[str]
    labels: dict[str, SemanticVector]
    embeddings: EmbeddingStore
    observations: list[ChoiceObservation]
    split: DatasetSplit
    zones: dict[str, ZoneEntry] = field(default_factory=dict)

    def manifest(self, root: Path | None = None) -> Manifest:
        return Manifest(
            root=root or Path("."),
            zones="zones.csv",
            k=self.spec.k,
            numeric_attributes=self.spec.numeric_attributes,
        )

    def to_dataset(self) -> Dataset:
        return Dataset(
            manifest=self.manifest(),
            observations=list(self.observations),
            embeddings=self.embeddings,
            labels=dict(self.labels),
            zones=dict(self.zones),
            split=self.split,
        )


def simulate_dataset(spec: SyntheticSpec) -> SyntheticDataset:
    """Full synthetic dataset with an image-disjoint train/test split.

    Images are partitioned first; test observations only pair test images.
    """
    assert_valid_synthetic_spec(spec)
    image_ids, labels = simulate_semantics(spec)
    embeddings = simulate_embeddings(spec, labels)

    split_rng = _rng(spec, SPLIT_STREAM)
    n_test = int(round(spec.test_fraction * spec.n_observations))
    if n_test:
        n_test_images = min(
            max(N_ALTERNATIVES, int(round(spec.test_fraction * len(image_ids)))),
            len(image_ids) - N_ALTERNATIVES,
        )
        order = split_rng.permutation(len(image_ids))
        test_images = sorted(image_ids[i] for i in order[:n_test_images])
        train_images = sorted(image_ids[i] for i in order[n_test_images:])
    else:
        test_images, train_images = [], list(image_ids)

    choice_rng = _rng(spec, CHOICE_STREAM)
    n_train = spec.n_observations - n_test
    train_obs = simulate_choices(spec, train_images, labels, n_train, 0, choice_rng)
    test_obs = (
        simulate_choices(spec, test_images, labels, n_test, n_train, choice_rng) if n_test else []
    )
    split = DatasetSplit(
        train=tuple(obs.obs_id for obs in train_obs),
        test=tuple(obs.obs_id for obs in test_obs),
    )
    logger.info(
        "Simulated %d observations (%d test) over %d images, K=%d",
        spec.n_observations,
        n_test,
        len(image_ids),
        spec.k,
    )
    return SyntheticDataset(
        spec=spec,
        image_ids=image_ids,
        labels=labels,
        embeddings=embeddings,
        observations=train_obs + test_obs,
        split=split,
        zones=simulate_zones(spec, image_ids),
    )


def true_choice_probabilities(
    spec: SyntheticSpec,
    observations: Sequence[ChoiceObservation],
    labels: Mapping[str, SemanticVector],
) -> np.ndarray:
    x = np.array([[alt.numeric_attrs for alt in obs.alternatives] for obs in observations])
    semantics = np.array(
        [[labels[img].to_array() for img in obs.image_ids] for obs in observations]
    )
    return choice_probabilities(true_utilities(spec, x, semantics))


def bayes_optimal_cross_entropy(
    spec: SyntheticSpec,
    observations: Sequence[ChoiceObservation],
    labels: Mapping[str, SemanticVector],
) -> dict[str, float]:
    """Cross entropy of the generating model on the realised choices, and its expectation."""
    if not observations:
        raise ValueError("No observations")
    p = true_choice_probabilities(spec, observations, labels)
    chosen = np.array([obs.chosen for obs in observations])
    log_p = np.maximum(np.log(p), LOG_PROBABILITY_FLOOR)
    return {
        "realised": -math.fsum(log_p[np.arange(len(chosen)), chosen]) / len(chosen),
        "expected": -float(np.sum(p * log_p)) / len(chosen),
    }


def truth_payload(spec: SyntheticSpec) -> dict[str, Any]:
    return {
        "spec": spec.to_dict(),
        "beta_num": dict(spec.true_beta_num),
        "beta_sem": dict(spec.true_beta_sem),
        "beta_res": [0.0] * spec.k,
        "mixing_matrix": spec.mixing_matrix().tolist(),
        "mixing_rank_deficient": mixing_is_rank_deficient(spec),
    }


def write_synthetic_dataset(synthetic: SyntheticDataset, directory: str | Path) -> Path:
    """Write every data file plus manifest.json and truth.json; returns the manifest path."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    manifest = synthetic.manifest(root)
    write_choice_data(
        synthetic.observations,
        root / manifest.choices,
        synthetic.spec.numeric_attributes,
    )
    write_embeddings(
        synthetic.embeddings,
        root / manifest.embeddings,
        root / manifest.embedding_index,
    )
    write_semantic_labels(synthetic.labels, root / str(manifest.semantics))
    write_split(synthetic.split, root / str(manifest.split))
    write_zone_map(synthetic.zones, root / str(manifest.zones))
    manifest_path = root / "manifest.json"
    write_manifest(manifest, manifest_path)
    write_json(truth_payload(synthetic.spec), root / "truth.json")
    return manifest_path
