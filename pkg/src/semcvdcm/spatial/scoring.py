from __future__ import annotations

import logging
import os
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from semcvdcm.core.params import ModelParams
from semcvdcm.core.utility import (
    EmbeddingLike,
    UtilityBreakdown,
    clamp_semantics,
    head_forward,
    predict_semantics,
    systematic_utility,
)
from semcvdcm.model.embeddings import EmbeddingStore
from semcvdcm.model.entities import SEMANTIC_ATTRIBUTES, SemanticVector
from semcvdcm.model.storage import StorageError

logger = logging.getLogger(__name__)

# Rows per scoring task; fixed so results do not depend on the thread count.
SCORING_CHUNK = 16_384

UTILITY_COLUMNS = tuple(f"u_{name}" for name in SEMANTIC_ATTRIBUTES)
SCORE_COLUMNS = (
    "image_id",
    *SEMANTIC_ATTRIBUTES,
    *UTILITY_COLUMNS,
    "v_semantic",
    "v_residual",
    "v_total",
)


@dataclass(frozen=True)
class ImageScore:
    """Street-level utility of one image; numeric attributes never enter it."""

    image_id: str
    semantics: SemanticVector
    breakdown: UtilityBreakdown


def score_image(
    params: ModelParams,
    image_id: str,
    z: EmbeddingLike,
    include_residual: bool = True,
) -> ImageScore:
    semantics = predict_semantics(params, z)
    breakdown = systematic_utility(
        params, None, semantics, z, include_numeric=False, include_residual=include_residual
    )
    return ImageScore(image_id=image_id, semantics=semantics, breakdown=breakdown)


def _score_chunk(
    params: ModelParams,
    z: np.ndarray,
    include_residual: bool,
) -> np.ndarray:
    raw, _ = head_forward(params, z)
    semantics = clamp_semantics(raw)
    per_attribute = semantics * params.beta_sem
    v_semantic = per_attribute.sum(axis=1)
    v_residual = z @ params.beta_res if include_residual else np.zeros(len(z))
    v_total = v_semantic + v_residual
    return np.column_stack([semantics, per_attribute, v_semantic, v_residual, v_total])


def default_threads() -> int:
    return os.cpu_count() or 1


def score_images(
    params: ModelParams,
    embeddings: EmbeddingStore,
    image_ids: Iterable[str] | None = None,
    include_residual: bool = True,
    threads: int | None = None,
) -> pd.DataFrame:
    """Score every image (or ``image_ids``) in image_id order.

    Chunks are scored concurrently and concatenated in a fixed order, so the
    result is identical for any thread count and any input order.
    """
    if embeddings.k != params.k:
        raise ValueError(f"Embeddings have K={embeddings.k}, model expects K={params.k}")
    ids = sorted(set(embeddings) if image_ids is None else set(image_ids))
    missing = [image_id for image_id in ids if image_id not in embeddings]
    if missing:
        raise ValueError(f"missing embedding for images {missing[:10]}")

    chunks = [ids[start : start + SCORING_CHUNK] for start in range(0, len(ids), SCORING_CHUNK)]

    def work(chunk: list[str]) -> np.ndarray:
        z = embeddings.rows(chunk)
        if not np.isfinite(z).all():
            raise ValueError("Embedding contains non-finite values")
        return _score_chunk(params, z, include_residual)

    workers = max(1, threads or default_threads())
    if workers == 1 or len(chunks) <= 1:
        blocks = [work(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(work, chunks))

    values = np.vstack(blocks) if blocks else np.zeros((0, len(SCORE_COLUMNS) - 1))
    frame = pd.DataFrame(values, columns=list(SCORE_COLUMNS[1:]))
    frame.insert(0, "image_id", ids)
    logger.info("Scored %d images with %d worker(s)", len(ids), workers)
    return frame


def frame_to_scores(frame: pd.DataFrame) -> list[ImageScore]:
    scores = []
    for row in frame.itertuples(index=False):
        values = row._asdict()
        attributes = np.array([values[name] for name in SEMANTIC_ATTRIBUTES], dtype=np.float64)
        semantics = SemanticVector.from_array(attributes)
        breakdown = UtilityBreakdown(
            v_numeric=0.0,
            v_semantic=float(values["v_semantic"]),
            per_attribute=tuple(float(values[name]) for name in UTILITY_COLUMNS),
            v_residual=float(values["v_residual"]),
            v_total=float(values["v_total"]),
        )
        scores.append(ImageScore(str(values["image_id"]), semantics, breakdown))
    return scores


def write_image_scores(frame: pd.DataFrame, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    try:
        frame.loc[:, list(SCORE_COLUMNS)].to_csv(target, index=False, lineterminator="\n")
    except OSError as exc:
        raise StorageError(f"Could not write image scores: {target}") from exc


def load_image_scores(path: str | Path) -> pd.DataFrame:
    source = Path(path)
    try:
        frame = pd.read_csv(source, dtype={"image_id": str}, float_precision="round_trip")
    except OSError as exc:
        raise StorageError(f"Could not read image scores: {source}") from exc
    except (ValueError, pd.errors.ParserError) as exc:
        raise StorageError(f"Malformed image scores file: {source}") from exc
    if tuple(frame.columns) != SCORE_COLUMNS:
        raise StorageError(f"Image scores header must be {','.join(SCORE_COLUMNS)}: {source}")
    return frame
