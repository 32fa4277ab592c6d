from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from semcvdcm.model.embeddings import (
    HEADER,
    MAGIC,
    VERSION,
    EmbeddingStore,
    load_embeddings,
    write_embeddings,
)
from semcvdcm.model.storage import StorageError


def _write_raw(path: Path, k: int, payload: bytes, magic: bytes = MAGIC) -> None:
    path.write_bytes(HEADER.pack(magic, VERSION, k) + payload)


def _write_index(path: Path, rows: dict[str, int]) -> None:
    lines = ["image_id,row"] + [f"{image_id},{row}" for image_id, row in rows.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_lookup_returns_the_indexed_row(tmp_path: Path) -> None:
    matrix = np.arange(12, dtype="<f4").reshape(3, 4)
    _write_raw(tmp_path / "emb.bin", 4, matrix.tobytes())
    _write_index(tmp_path / "emb.idx.csv", {"img_c": 2, "img_a": 0})

    store = load_embeddings(tmp_path / "emb.bin", tmp_path / "emb.idx.csv")

    assert store.k == 4
    assert store.n_rows == 3
    assert len(store) == 2
    assert "img_b" not in store
    assert store.lookup("img_c").values.tolist() == [8.0, 9.0, 10.0, 11.0]
    assert store.rows(["img_c", "img_a"]).dtype == np.float64
    with pytest.raises(KeyError):
        store.lookup("img_b")


def test_index_out_of_range_is_rejected(tmp_path: Path) -> None:
    _write_raw(tmp_path / "emb.bin", 2, np.zeros((2, 2), dtype="<f4").tobytes())
    _write_index(tmp_path / "emb.idx.csv", {"img_a": 0, "img_b": 2})

    with pytest.raises(StorageError, match="out of range"):
        load_embeddings(tmp_path / "emb.bin", tmp_path / "emb.idx.csv")


def test_bad_magic_is_rejected(tmp_path: Path) -> None:
    _write_raw(tmp_path / "emb.bin", 2, np.zeros((1, 2), dtype="<f4").tobytes(), b"NOTMAGIC")
    _write_index(tmp_path / "emb.idx.csv", {"img_a": 0})

    with pytest.raises(StorageError, match="Bad magic"):
        load_embeddings(tmp_path / "emb.bin", tmp_path / "emb.idx.csv")


def test_zero_dimension_is_rejected(tmp_path: Path) -> None:
    _write_raw(tmp_path / "emb.bin", 0, b"")
    _write_index(tmp_path / "emb.idx.csv", {})

    with pytest.raises(StorageError, match="K=0"):
        load_embeddings(tmp_path / "emb.bin", tmp_path / "emb.idx.csv")


def test_truncated_payload_is_rejected(tmp_path: Path) -> None:
    _write_raw(tmp_path / "emb.bin", 4, np.zeros(6, dtype="<f4").tobytes())
    _write_index(tmp_path / "emb.idx.csv", {"img_a": 0})

    with pytest.raises(StorageError, match="whole number"):
        load_embeddings(tmp_path / "emb.bin", tmp_path / "emb.idx.csv")


def test_non_finite_values_are_rejected(tmp_path: Path) -> None:
    matrix = np.ones((3, 2), dtype="<f4")
    matrix[1, 0] = np.nan
    _write_raw(tmp_path / "emb.bin", 2, matrix.tobytes())
    _write_index(tmp_path / "emb.idx.csv", {"img_a": 0})

    with pytest.raises(StorageError, match="Non-finite"):
        load_embeddings(tmp_path / "emb.bin", tmp_path / "emb.idx.csv")


def test_large_matrix_roundtrip_is_bitwise(tmp_path: Path) -> None:
    rng = np.random.default_rng(7)
    matrix = rng.normal(size=(1000, 768)).astype("<f4")
    store = EmbeddingStore(matrix, {f"img{row:04d}": row for row in range(1000)})

    write_embeddings(store, tmp_path / "emb.bin", tmp_path / "emb.idx.csv")
    loaded = load_embeddings(tmp_path / "emb.bin", tmp_path / "emb.idx.csv")

    assert loaded.k == 768
    assert loaded.index == store.index
    assert np.asarray(loaded.matrix).tobytes() == matrix.tobytes()


def test_store_from_rows_is_read_only() -> None:
    store = EmbeddingStore.from_rows({"img_a": np.array([1.0, 2.0]), "img_b": np.array([3.0, 4.0])})

    assert store["img_b"].tolist() == [3.0, 4.0]
    with pytest.raises(ValueError):
        store.matrix[0, 0] = 5.0
