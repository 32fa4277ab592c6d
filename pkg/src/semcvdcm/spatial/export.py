from __future__ import annotations

import copy
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import pandas as pd

from semcvdcm.model.entities import SEMANTIC_ATTRIBUTES
from semcvdcm.model.storage import StorageError, write_json

from .aggregation import ZoneAggregation, ZoneDecomposition, ZoneReport

logger = logging.getLogger(__name__)

ZONE_SCORE_COLUMNS = (
    "zone_id",
    "image_count",
    "mean_utility",
    *(f"mean_{name}" for name in SEMANTIC_ATTRIBUTES),
    "mean_residual",
)
ZONE_MEDIAN_COLUMNS = ("zone_id", "median_utility", "low_confidence")
DECOMPOSITION_COLUMNS = ("zone_id", "attribute", "delta")


def _write_csv(frame: pd.DataFrame, path: Path, what: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise StorageError(f"Could not write {what}: {path}") from exc


def write_zone_scores(zones: Sequence[ZoneReport], path: str | Path) -> None:
    frame = pd.DataFrame([zone.to_dict() for zone in zones], columns=list(ZONE_SCORE_COLUMNS))
    _write_csv(frame, Path(path), "zone scores")


def write_zone_medians(zones: Sequence[ZoneReport], path: str | Path) -> None:
    frame = pd.DataFrame(
        [
            {
                "zone_id": zone.zone_id,
                "median_utility": zone.median_utility,
                "low_confidence": str(zone.low_confidence).lower(),
            }
            for zone in zones
        ],
        columns=list(ZONE_MEDIAN_COLUMNS),
    )
    _write_csv(frame, Path(path), "zone medians")


def load_zone_scores(
    path: str | Path,
    medians_path: str | Path | None = None,
) -> list[ZoneReport]:
    """Read zone_scores.csv back into reports; medians and flags come from zone_medians.csv."""
    source = Path(path)
    try:
        frame = pd.read_csv(source, dtype={"zone_id": str}, float_precision="round_trip")
    except OSError as exc:
        raise StorageError(f"Could not read zone scores: {source}") from exc
    except (ValueError, pd.errors.ParserError) as exc:
        raise StorageError(f"Malformed zone scores file: {source}") from exc
    if tuple(frame.columns) != ZONE_SCORE_COLUMNS:
        raise StorageError(f"Zone scores header must be {','.join(ZONE_SCORE_COLUMNS)}: {source}")

    medians: dict[str, tuple[float, bool]] = {}
    if medians_path is not None and Path(medians_path).exists():
        try:
            extra = pd.read_csv(
                medians_path,
                dtype={"zone_id": str, "low_confidence": str},
                float_precision="round_trip",
            )
        except (OSError, ValueError, pd.errors.ParserError) as exc:
            raise StorageError(f"Could not read zone medians: {medians_path}") from exc
        medians = {
            row.zone_id: (float(row.median_utility), row.low_confidence == "true")
            for row in extra.itertuples(index=False)
        }

    reports = []
    for row in frame.to_dict("records"):
        zone_id = str(row["zone_id"])
        median, low = medians.get(zone_id, (float("nan"), False))
        reports.append(
            ZoneReport(
                zone_id=zone_id,
                image_count=int(row["image_count"]),
                mean_utility=float(row["mean_utility"]),
                attribute_means=tuple(float(row[f"mean_{name}"]) for name in SEMANTIC_ATTRIBUTES),
                mean_residual=float(row["mean_residual"]),
                median_utility=median,
                low_confidence=low,
            )
        )
    return reports


def write_decomposition(decompositions: Sequence[ZoneDecomposition], path: str | Path) -> None:
    records = [row for decomposition in decompositions for row in decomposition.rows()]
    frame = pd.DataFrame(records, columns=list(DECOMPOSITION_COLUMNS))
    _write_csv(frame, Path(path), "decomposition")


def format_bar_table(
    decomposition: ZoneDecomposition, reference_class: str, width: int = 30
) -> str:
    """Text rendering of one zone's deviation bars; the reference class is not drawn."""
    bars = [bar for bar in decomposition.bars if bar.attribute != reference_class]
    scale = max([abs(bar.delta) for bar in bars] + [abs(decomposition.residual), 1e-12])
    lines = [f"Zone {decomposition.zone_id}: total deviation {decomposition.total:+.4f}"]
    for name, delta in [(bar.attribute, bar.delta) for bar in bars] + [
        ("residual", decomposition.residual)
    ]:
        length = int(round(abs(delta) / scale * width))
        left = ("#" * length).rjust(width) if delta < 0 else " " * width
        right = ("#" * length).ljust(width) if delta > 0 else " " * width
        marker = "*" if name == decomposition.highlighted_attribute else " "
        lines.append(f"{marker}{name:<12} {left}|{right} {delta:+.4f}")
    return "\n".join(lines) + "\n"


def load_geojson(path: str | Path) -> dict[str, Any]:
    """Read a FeatureCollection whose features carry a unique ``zone_id`` property."""
    source = Path(path)
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"Could not read GeoJSON: {source}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"Malformed GeoJSON: {source}") from exc

    if not isinstance(data, dict) or data.get("type") != "FeatureCollection":
        raise StorageError(f"GeoJSON must be a FeatureCollection: {source}")
    features = data.get("features")
    if not isinstance(features, list):
        raise StorageError(f"GeoJSON has no feature list: {source}")
    seen: set[str] = set()
    for position, feature in enumerate(features):
        properties = feature.get("properties") if isinstance(feature, dict) else None
        if not isinstance(properties, dict) or "zone_id" not in properties:
            raise StorageError(f"Feature {position} has no zone_id property: {source}")
        zone_id = str(properties["zone_id"])
        if zone_id in seen:
            raise StorageError(f"Duplicate zone_id feature: {zone_id}")
        seen.add(zone_id)
    return data


@dataclass
class GeoJoin:
    geojson: dict[str, Any]
    joined: list[str] = field(default_factory=list)
    zones_without_geometry: list[str] = field(default_factory=list)


def join_geojson(
    geojson: Mapping[str, Any],
    aggregation: ZoneAggregation,
    decompositions: Sequence[ZoneDecomposition] = (),
) -> GeoJoin:
    """Copy of ``geojson`` with zone statistics added as feature properties.

    Geometry, CRS and all other members are left untouched.
    """
    output = copy.deepcopy(dict(geojson))
    zones = {zone.zone_id: zone for zone in aggregation.zones}
    deltas = {item.zone_id: item for item in decompositions}
    result = GeoJoin(geojson=output)
    for feature in output["features"]:
        zone_id = str(feature["properties"]["zone_id"])
        zone = zones.get(zone_id)
        if zone is None:
            continue
        properties = feature["properties"]
        properties["image_count"] = zone.image_count
        properties["mean_utility"] = zone.mean_utility
        properties["median_utility"] = zone.median_utility
        properties["low_confidence"] = zone.low_confidence
        decomposition = deltas.get(zone_id)
        if decomposition is not None:
            properties.update({f"delta_{bar.attribute}": bar.delta for bar in decomposition.bars})
            properties["delta_residual"] = decomposition.residual
            properties["delta_total"] = decomposition.total
        result.joined.append(zone_id)
    result.zones_without_geometry = sorted(set(zones) - set(result.joined))
    if result.zones_without_geometry:
        logger.warning("%d zones have no geometry", len(result.zones_without_geometry))
    return result


def export_results(
    aggregation: ZoneAggregation,
    decompositions: Sequence[ZoneDecomposition],
    directory: str | Path,
    geojson_path: str | Path | None = None,
) -> dict[str, Any]:
    """Write the zone CSV files, plus the joined GeoJSON when ``geojson_path`` is given."""
    root = Path(directory)
    written = {
        "zone_scores": root / "zone_scores.csv",
        "zone_medians": root / "zone_medians.csv",
        "decomposition": root / "decomposition.csv",
    }
    write_zone_scores(aggregation.zones, written["zone_scores"])
    write_zone_medians(aggregation.zones, written["zone_medians"])
    write_decomposition(decompositions, written["decomposition"])
    summary: dict[str, Any] = {"files": {name: str(path) for name, path in written.items()}}
    if geojson_path is not None:
        joined = join_geojson(load_geojson(geojson_path), aggregation, decompositions)
        target = root / "zones.geojson"
        write_json(joined.geojson, target)
        summary["files"]["geojson"] = str(target)
        summary["zones_without_geometry"] = joined.zones_without_geometry
    return summary
