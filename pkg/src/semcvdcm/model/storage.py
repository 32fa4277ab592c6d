from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .entities import (
    N_ALTERNATIVES,
    PROPORTION_COLUMNS,
    RENORMALISE_TOLERANCE,
    Alternative,
    ChoiceObservation,
    DatasetSplit,
    Manifest,
    SemanticVector,
    ZoneEntry,
    derive_semantic_vector,
)

logger = logging.getLogger(__name__)

CHOICE_ID_COLUMNS = ("obs_id", "respondent_id", "alt_id", "image_id")
SEMANTIC_COLUMNS = ("image_id", "car_count", *PROPORTION_COLUMNS)
ZONE_COLUMNS = ("image_id", "zone_id", "lon", "lat")
SPLIT_COLUMNS = ("obs_id", "split")


class StorageError(Exception):
    pass


@dataclass
class LabelSet:
    """Semantic labels keyed by image id plus the ids whose proportions were renormalised."""

    labels: dict[str, SemanticVector] = field(default_factory=dict)
    renormalised: list[str] = field(default_factory=list)


def _read_text_frame(path: str | Path, what: str) -> pd.DataFrame:
    source = Path(path)
    try:
        return pd.read_csv(source, dtype=str, keep_default_na=False)
    except OSError as exc:
        raise StorageError(f"Could not read {what} file: {source}") from exc
    except (ValueError, pd.errors.ParserError) as exc:
        raise StorageError(f"Malformed {what} file: {source}") from exc


def _numeric_column(frame: pd.DataFrame, column: str, what: str) -> pd.Series:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=np.float64, na_value=np.nan))
    if bad.any():
        rows = (np.flatnonzero(bad.to_numpy()) + 2).tolist()
        raise StorageError(f"Malformed row in {what} file: column {column}, line(s) {rows[:5]}")
    return values.astype(np.float64)


def _write_frame(frame: pd.DataFrame, path: str | Path, what: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    try:
        frame.to_csv(target, index=False, lineterminator="\n")
    except OSError as exc:
        raise StorageError(f"Could not write {what} file: {target}") from exc


def attribute_columns(names: Iterable[str]) -> list[str]:
    return [f"attr_{name}" for name in names]


def load_choice_data(path: str | Path) -> list[ChoiceObservation]:
    frame = _read_text_frame(path, "choices")
    columns = list(frame.columns)
    missing = [name for name in (*CHOICE_ID_COLUMNS, "chosen") if name not in columns]
    attr_names = [name for name in columns if name.startswith("attr_")]
    if missing or not attr_names:
        raise StorageError(f"Choices header is missing {missing or ['attr_*']}: {path}")

    alt_ids = _numeric_column(frame, "alt_id", "choices")
    chosen = _numeric_column(frame, "chosen", "choices")
    bad_flags = ~alt_ids.isin([0, 1]) | ~chosen.isin([0, 1])
    if bad_flags.any():
        rows = (np.flatnonzero(bad_flags.to_numpy()) + 2).tolist()
        raise StorageError(
            f"Malformed row in choices file: alt_id/chosen not 0/1, line(s) {rows[:5]}"
        )
    attrs = np.column_stack([_numeric_column(frame, name, "choices") for name in attr_names])

    frame = frame.assign(alt_id=alt_ids.astype(np.int64), chosen=chosen.astype(np.int64))
    duplicated = frame.duplicated(["obs_id", "alt_id"], keep=False)
    if duplicated.any():
        pairs = sorted(set(zip(frame.loc[duplicated, "obs_id"], frame.loc[duplicated, "alt_id"])))
        raise StorageError(f"Duplicate (obs_id, alt_id) pairs: {pairs[:5]}")

    grouped = frame.groupby("obs_id", sort=False)
    sizes = grouped.size()
    wrong_size = sizes[sizes != N_ALTERNATIVES]
    if len(wrong_size):
        raise StorageError(
            f"Observations without exactly {N_ALTERNATIVES} alternatives: "
            f"{wrong_size.index.tolist()[:5]}"
        )
    chosen_count = grouped["chosen"].sum()
    wrong_chosen = chosen_count[chosen_count != 1]
    if len(wrong_chosen):
        raise StorageError(
            f"chosen-count must be 1 per observation: {wrong_chosen.index.tolist()[:5]}"
        )
    respondents = grouped["respondent_id"].nunique()
    if (respondents != 1).any():
        raise StorageError(
            f"Observations with conflicting respondent ids: "
            f"{respondents[respondents != 1].index.tolist()[:5]}"
        )

    order = frame.reset_index(drop=True).sort_values(["obs_id", "alt_id"], kind="mergesort").index
    order = order.to_numpy()
    obs_ids = frame["obs_id"].to_numpy()[order]
    respondent_ids = frame["respondent_id"].to_numpy()[order]
    image_ids = frame["image_id"].to_numpy()[order]
    alt_column = frame["alt_id"].to_numpy()[order]
    chosen_column = frame["chosen"].to_numpy()[order]
    attrs = attrs[order]

    observations: list[ChoiceObservation] = []
    for start in range(0, len(order), N_ALTERNATIVES):
        stop = start + N_ALTERNATIVES
        alternatives = tuple(
            Alternative(
                alt_id=int(alt_column[row]),
                image_id=str(image_ids[row]),
                numeric_attrs=tuple(float(v) for v in attrs[row]),
            )
            for row in range(start, stop)
        )
        chosen_index = int(np.flatnonzero(chosen_column[start:stop])[0])
        observations.append(
            ChoiceObservation(
                obs_id=str(obs_ids[start]),
                respondent_id=str(respondent_ids[start]),
                alternatives=alternatives,
                chosen=chosen_index,
            )
        )
    logger.debug("Loaded %d choice observations from %s", len(observations), path)
    return observations


def write_choice_data(
    observations: Iterable[ChoiceObservation],
    path: str | Path,
    attribute_names: Iterable[str],
) -> None:
    attr_columns = attribute_columns(attribute_names)
    records: list[dict[str, Any]] = []
    for obs in observations:
        for index, alt in enumerate(obs.alternatives):
            if len(alt.numeric_attrs) != len(attr_columns):
                raise ValueError(
                    f"Observation {obs.obs_id} has {len(alt.numeric_attrs)} attributes, "
                    f"expected {len(attr_columns)}"
                )
            record: dict[str, Any] = {
                "obs_id": obs.obs_id,
                "respondent_id": obs.respondent_id,
                "alt_id": alt.alt_id,
                "image_id": alt.image_id,
            }
            record.update(zip(attr_columns, alt.numeric_attrs))
            record["chosen"] = int(index == obs.chosen)
            records.append(record)
    frame = pd.DataFrame(records, columns=[*CHOICE_ID_COLUMNS, *attr_columns, "chosen"])
    _write_frame(frame, path, "choices")


def load_semantic_labels(
    path: str | Path,
    tolerance: float = RENORMALISE_TOLERANCE,
) -> LabelSet:
    frame = _read_text_frame(path, "semantics")
    if tuple(frame.columns) != SEMANTIC_COLUMNS:
        raise StorageError(f"Semantics header must be {','.join(SEMANTIC_COLUMNS)}: {path}")
    duplicates = frame.loc[frame["image_id"].duplicated(), "image_id"].tolist()
    if duplicates:
        raise StorageError(f"Duplicate image ids in semantics file: {duplicates[:5]}")

    car_counts = _numeric_column(frame, "car_count", "semantics").to_numpy()
    proportions = np.column_stack(
        [_numeric_column(frame, name, "semantics").to_numpy() for name in PROPORTION_COLUMNS]
    )

    result = LabelSet()
    errors: list[str] = []
    for image_id, car_count, row in zip(frame["image_id"], car_counts, proportions):
        try:
            vector, renormalised = derive_semantic_vector(car_count, row.tolist(), tolerance)
        except ValueError as exc:
            errors.append(f"{image_id}: {exc}")
            continue
        result.labels[str(image_id)] = vector
        if renormalised:
            result.renormalised.append(str(image_id))
    if errors:
        raise StorageError("Invalid semantic labels:\n- " + "\n- ".join(errors[:20]))

    result.labels = dict(sorted(result.labels.items()))
    result.renormalised.sort()
    if result.renormalised:
        logger.info(
            "Renormalised %d semantic label rows with proportion sums in (1, %.3f]",
            len(result.renormalised),
            1 + tolerance,
        )
    return result


def write_semantic_labels(labels: Mapping[str, SemanticVector], path: str | Path) -> None:
    records = [
        {"image_id": image_id, "car_count": vector.car_count}
        | dict(zip(PROPORTION_COLUMNS, vector.proportions))
        for image_id, vector in sorted(labels.items())
    ]
    _write_frame(pd.DataFrame(records, columns=list(SEMANTIC_COLUMNS)), path, "semantics")


def _optional_float(value: str, column: str, line: int) -> float | None:
    text = value.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError as exc:
        raise StorageError(f"Malformed {column} on line {line} of zones file: {value!r}") from exc


def load_zone_map(path: str | Path) -> dict[str, ZoneEntry]:
    frame = _read_text_frame(path, "zones")
    if tuple(frame.columns) != ZONE_COLUMNS:
        raise StorageError(f"Zones header must be {','.join(ZONE_COLUMNS)}: {path}")
    duplicates = frame.loc[frame["image_id"].duplicated(), "image_id"].tolist()
    if duplicates:
        raise StorageError(f"Images mapped to more than one zone: {duplicates[:5]}")
    empty_zone = frame.loc[frame["zone_id"].str.strip() == "", "image_id"].tolist()
    if empty_zone:
        raise StorageError(f"Empty zone_id for images: {empty_zone[:5]}")

    zones: dict[str, ZoneEntry] = {}
    for line, (image_id, zone_id, lon, lat) in enumerate(
        frame.itertuples(index=False, name=None), start=2
    ):
        zones[str(image_id)] = ZoneEntry(
            image_id=str(image_id),
            zone_id=str(zone_id),
            lon=_optional_float(lon, "lon", line),
            lat=_optional_float(lat, "lat", line),
        )
    return dict(sorted(zones.items()))


def write_zone_map(zones: Mapping[str, ZoneEntry], path: str | Path) -> None:
    records = [
        {
            "image_id": entry.image_id,
            "zone_id": entry.zone_id,
            "lon": "" if entry.lon is None else repr(float(entry.lon)),
            "lat": "" if entry.lat is None else repr(float(entry.lat)),
        }
        for _, entry in sorted(zones.items())
    ]
    _write_frame(pd.DataFrame(records, columns=list(ZONE_COLUMNS)), path, "zones")


def load_split(path: str | Path) -> DatasetSplit:
    frame = _read_text_frame(path, "split")
    if tuple(frame.columns) != SPLIT_COLUMNS:
        raise StorageError(f"Split header must be {','.join(SPLIT_COLUMNS)}: {path}")
    unknown = sorted(set(frame["split"]) - {"train", "test"})
    if unknown:
        raise StorageError(f"Unknown split names: {unknown}")
    return DatasetSplit(
        train=tuple(sorted(frame.loc[frame["split"] == "train", "obs_id"])),
        test=tuple(sorted(frame.loc[frame["split"] == "test", "obs_id"])),
    )


def write_split(split: DatasetSplit, path: str | Path) -> None:
    records = [{"obs_id": obs_id, "split": "train"} for obs_id in split.train]
    records += [{"obs_id": obs_id, "split": "test"} for obs_id in split.test]
    records.sort(key=lambda record: record["obs_id"])
    _write_frame(pd.DataFrame(records, columns=list(SPLIT_COLUMNS)), path, "split")


def load_manifest(path: str | Path) -> Manifest:
    source = Path(path)
    try:
        raw = json.loads(source.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"Could not read manifest: {source}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"Manifest is not valid JSON: {source}") from exc
    if not isinstance(raw, dict):
        raise StorageError(f"Manifest must be a JSON object: {source}")
    return Manifest.from_dict(raw, root=source.parent)


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    write_json(manifest.to_dict(), path)


def write_json(payload: Any, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    try:
        text = json.dumps(payload, ensure_ascii=False, indent=2) + "\n"
        target.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"Could not write {target}") from exc


def read_json(path: str | Path) -> Any:
    source = Path(path)
    try:
        return json.loads(source.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"Could not read {source}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"Not valid JSON: {source}") from exc
