from __future__ import annotations

import logging
import struct
from collections.abc import Iterable, Iterator, Mapping
from pathlib import Path

import numpy as np
import pandas as pd

from .entities import Embedding
from .storage import StorageError

logger = logging.getLogger(__name__)

MAGIC = b"CVDCMEMB"
VERSION = 1
HEADER = struct.Struct("<8sII")
FLOAT_DTYPE = np.dtype("<f4")
FINITE_CHECK_BLOCK = 65536


class EmbeddingStore(Mapping[str, np.ndarray]):
    """Read-only image_id -> feature map lookup over a row-major float32 matrix.

    The matrix may be a memory map; rows are handed out as read-only views.
    """

    def __init__(self, matrix: np.ndarray, index: Mapping[str, int]) -> None:
        if matrix.ndim != 2:
            raise ValueError(f"Embedding matrix must be 2-D, got shape {matrix.shape}")
        self._matrix = matrix
        self._index = dict(index)
        if isinstance(self._matrix, np.ndarray) and not isinstance(self._matrix, np.memmap):
            self._matrix.flags.writeable = False

    @property
    def k(self) -> int:
        return int(self._matrix.shape[1])

    @property
    def n_rows(self) -> int:
        return int(self._matrix.shape[0])

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def index(self) -> dict[str, int]:
        return dict(self._index)

    def __getitem__(self, image_id: str) -> np.ndarray:
        return self._matrix[self._index[image_id]]

    def __iter__(self) -> Iterator[str]:
        return iter(self._index)

    def __len__(self) -> int:
        return len(self._index)

    def lookup(self, image_id: str) -> Embedding:
        if image_id not in self._index:
            raise KeyError(f"No embedding for image {image_id}")
        return Embedding(image_id=image_id, values=self[image_id])

    def rows(self, image_ids: Iterable[str]) -> np.ndarray:
        """Gather rows as a float64 array, in the order given."""
        positions = np.fromiter(
            (self._index[image_id] for image_id in image_ids), dtype=np.int64
        )
        return np.asarray(self._matrix[positions], dtype=np.float64)

    @classmethod
    def from_rows(cls, rows: Mapping[str, np.ndarray]) -> EmbeddingStore:
        image_ids = list(rows)
        if not image_ids:
            raise ValueError("Cannot build an embedding store without rows")
        matrix = np.vstack([np.asarray(rows[iid], dtype=FLOAT_DTYPE) for iid in image_ids])
        return cls(matrix, {image_id: row for row, image_id in enumerate(image_ids)})


def write_embeddings(
    store: EmbeddingStore,
    matrix_path: str | Path,
    index_path: str | Path,
) -> None:
    matrix = np.ascontiguousarray(store.matrix, dtype=FLOAT_DTYPE)
    index = pd.DataFrame(
        sorted(store.index.items(), key=lambda item: (item[1], item[0])),
        columns=["image_id", "row"],
    )
    try:
        with Path(matrix_path).open("wb") as handle:
            handle.write(HEADER.pack(MAGIC, VERSION, matrix.shape[1]))
            handle.write(matrix.tobytes(order="C"))
        index.to_csv(index_path, index=False, lineterminator="\n")
    except OSError as exc:
        raise StorageError(f"Could not write embeddings: {matrix_path}") from exc


def load_embeddings(
    matrix_path: str | Path,
    index_path: str | Path,
    check_finite: bool = True,
) -> EmbeddingStore:
    source = Path(matrix_path)
    try:
        with source.open("rb") as handle:
            header = handle.read(HEADER.size)
        file_size = source.stat().st_size
    except OSError as exc:
        raise StorageError(f"Could not read embedding matrix: {source}") from exc

    if len(header) != HEADER.size:
        raise StorageError(f"Embedding file too short for header: {source}")
    magic, version, k = HEADER.unpack(header)
    if magic != MAGIC:
        raise StorageError(f"Bad magic in embedding file {source}: {magic!r}")
    if version != VERSION:
        raise StorageError(f"Unsupported embedding file version {version}: {source}")
    if k == 0:
        raise StorageError(f"Embedding dimension K=0 in {source}")

    payload = file_size - HEADER.size
    row_bytes = k * FLOAT_DTYPE.itemsize
    if payload % row_bytes:
        raise StorageError(
            f"Embedding payload of {payload} bytes is not a whole number of K={k} rows"
        )
    n_rows = payload // row_bytes
    if n_rows:
        matrix = np.memmap(
            source, dtype=FLOAT_DTYPE, mode="r", offset=HEADER.size, shape=(n_rows, k)
        )
    else:
        matrix = np.empty((0, k), dtype=FLOAT_DTYPE)

    if check_finite:
        for start in range(0, n_rows, FINITE_CHECK_BLOCK):
            block = matrix[start : start + FINITE_CHECK_BLOCK]
            finite_rows = np.isfinite(block).all(axis=1)
            if not finite_rows.all():
                bad_rows = start + np.flatnonzero(~finite_rows)
                raise StorageError(
                    f"Non-finite embedding values in rows {bad_rows[:10].tolist()}"
                )

    try:
        frame = pd.read_csv(index_path, dtype={"image_id": str}, keep_default_na=False)
    except (OSError, ValueError) as exc:
        raise StorageError(f"Could not read embedding index: {index_path}") from exc
    if list(frame.columns) != ["image_id", "row"]:
        raise StorageError(f"Embedding index header must be image_id,row: {index_path}")
    try:
        rows = frame["row"].astype(np.int64)
    except ValueError as exc:
        raise StorageError(f"Non-integer row in embedding index: {index_path}") from exc

    out_of_range = frame.loc[(rows < 0) | (rows >= n_rows), "image_id"].tolist()
    if out_of_range:
        raise StorageError(
            f"Embedding index out of range for {out_of_range[:5]} (matrix has {n_rows} rows)"
        )
    duplicates = frame.loc[frame["image_id"].duplicated(), "image_id"].tolist()
    if duplicates:
        raise StorageError(f"Duplicate image ids in embedding index: {duplicates[:5]}")

    logger.debug("Loaded %d embeddings with K=%d from %s", len(frame), k, source)
    return EmbeddingStore(matrix, dict(zip(frame["image_id"], rows.tolist())))
