from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from semcvdcm.core.params import ModelParams
from semcvdcm.model.entities import PROPORTION_ATTRIBUTES, SEMANTIC_ATTRIBUTES, ZoneEntry

logger = logging.getLogger(__name__)

DEFAULT_MIN_ZONE_COUNT = 5


def _attribute_columns(values: Sequence[float]) -> dict[str, float]:
    return {f"mean_{name}": value for name, value in zip(SEMANTIC_ATTRIBUTES, values)}


@dataclass(frozen=True)
class ZoneReport:
    zone_id: str
    image_count: int
    mean_utility: float
    attribute_means: tuple[float, ...]
    mean_residual: float
    median_utility: float
    low_confidence: bool

    def attribute_mean(self, name: str) -> float:
        return self.attribute_means[SEMANTIC_ATTRIBUTES.index(name)]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "zone_id": self.zone_id,
            "image_count": self.image_count,
            "mean_utility": self.mean_utility,
        }
        out.update(_attribute_columns(self.attribute_means))
        out["mean_residual"] = self.mean_residual
        return out


@dataclass(frozen=True)
class CitywideMeans:
    image_count: int
    mean_utility: float
    attribute_means: tuple[float, ...]
    mean_residual: float

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"image_count": self.image_count, "mean_utility": self.mean_utility}
        out.update(_attribute_columns(self.attribute_means))
        out["mean_residual"] = self.mean_residual
        return out


@dataclass
class ZoneAggregation:
    zones: list[ZoneReport]
    citywide: CitywideMeans
    unmapped_images: list[str] = field(default_factory=list)
    min_count: int = DEFAULT_MIN_ZONE_COUNT

    def zone(self, zone_id: str) -> ZoneReport:
        for report in self.zones:
            if report.zone_id == zone_id:
                return report
        raise KeyError(f"Unknown zone: {zone_id}")


@dataclass(frozen=True)
class DeviationBar:
    attribute: str
    delta: float


@dataclass(frozen=True)
class ZoneDecomposition:
    """How far a zone's mean utility sits from the city mean, attribute by attribute.

    ``bars`` are ordered by |delta|, largest first; the reference class is
    included with a delta of exactly zero.
    """

    zone_id: str
    bars: tuple[DeviationBar, ...]
    residual: float
    total: float
    highlighted_attribute: str | None = None

    def delta(self, attribute: str) -> float:
        for bar in self.bars:
            if bar.attribute == attribute:
                return bar.delta
        raise KeyError(attribute)

    def rows(self) -> list[tuple[str, str, float]]:
        out = [(self.zone_id, bar.attribute, bar.delta) for bar in self.bars]
        out.append((self.zone_id, "residual", self.residual))
        out.append((self.zone_id, "total", self.total))
        return out


def _mapped_frame(
    scores: pd.DataFrame, zone_map: Mapping[str, ZoneEntry]
) -> tuple[pd.DataFrame, list[str]]:
    zones = pd.DataFrame(
        {
            "image_id": list(zone_map),
            "zone_id": [entry.zone_id for entry in zone_map.values()],
        }
    )
    merged = scores.merge(zones, on="image_id", how="left", sort=False)
    unmapped = sorted(merged.loc[merged["zone_id"].isna(), "image_id"].astype(str))
    return merged.loc[merged["zone_id"].notna()].copy(), unmapped


def aggregate_zones(
    scores: pd.DataFrame,
    zone_map: Mapping[str, ZoneEntry],
    min_count: int = DEFAULT_MIN_ZONE_COUNT,
) -> ZoneAggregation:
    """Per-zone means (and median utility) of the image scores.

    Zones with fewer than ``min_count`` images are kept but flagged low-confidence.
    """
    if not zone_map:
        raise ValueError("Zone map is empty")
    mapped, unmapped = _mapped_frame(scores, zone_map)
    if unmapped:
        logger.info("%d scored images are not mapped to any zone", len(unmapped))
    if mapped.empty:
        raise ValueError("No scored image is mapped to a zone")

    value_columns = ["v_total", *SEMANTIC_ATTRIBUTES, "v_residual"]
    grouped = mapped.groupby("zone_id", sort=True)
    means = grouped[value_columns].mean()
    counts = grouped.size()
    medians = grouped["v_total"].median()

    reports = [
        ZoneReport(
            zone_id=str(zone_id),
            image_count=int(counts[zone_id]),
            mean_utility=float(row["v_total"]),
            attribute_means=tuple(float(row[name]) for name in SEMANTIC_ATTRIBUTES),
            mean_residual=float(row["v_residual"]),
            median_utility=float(medians[zone_id]),
            low_confidence=int(counts[zone_id]) < min_count,
        )
        for zone_id, row in means.iterrows()
    ]
    city = mapped[value_columns].to_numpy(dtype=np.float64).mean(axis=0)
    citywide = CitywideMeans(
        image_count=len(mapped),
        mean_utility=float(city[0]),
        attribute_means=tuple(float(v) for v in city[1:-1]),
        mean_residual=float(city[-1]),
    )
    logger.info(
        "Aggregated %d images into %d zones (%d low-confidence)",
        len(mapped),
        len(reports),
        sum(report.low_confidence for report in reports),
    )
    return ZoneAggregation(
        zones=reports, citywide=citywide, unmapped_images=unmapped, min_count=min_count
    )


def highlighted_attribute(zone: ZoneReport, reference_class: str) -> str | None:
    """Proportion attribute with the greatest zone mean; car count and reference excluded."""
    best: tuple[float, str] | None = None
    for name in PROPORTION_ATTRIBUTES:
        if name == reference_class:
            continue
        value = zone.attribute_mean(name)
        if value > 0.0 and (best is None or value > best[0]):
            best = (value, name)
    return None if best is None else best[1]


def decompose_zone(
    zone: ZoneReport, citywide: CitywideMeans, params: ModelParams
) -> ZoneDecomposition:
    """Delta_t = beta_t * (zone mean s_t - city mean s_t); the rest is the residual deviation."""
    differences = np.asarray(zone.attribute_means) - np.asarray(citywide.attribute_means)
    deltas = params.beta_sem * differences
    # + 0.0 turns the reference class -0.0 into 0.0
    bars = [
        DeviationBar(name, float(delta) + 0.0) for name, delta in zip(SEMANTIC_ATTRIBUTES, deltas)
    ]
    bars.sort(key=lambda bar: (-abs(bar.delta), SEMANTIC_ATTRIBUTES.index(bar.attribute)))
    return ZoneDecomposition(
        zone_id=zone.zone_id,
        bars=tuple(bars),
        residual=zone.mean_residual - citywide.mean_residual,
        total=zone.mean_utility - citywide.mean_utility,
        highlighted_attribute=highlighted_attribute(zone, params.reference_class),
    )


def decompose_zones(
    aggregation: ZoneAggregation,
    params: ModelParams,
    zone_ids: Iterable[str] | None = None,
) -> list[ZoneDecomposition]:
    wanted = None if zone_ids is None else set(zone_ids)
    if wanted is not None:
        unknown = wanted - {zone.zone_id for zone in aggregation.zones}
        if unknown:
            raise ValueError(f"Unknown zones: {sorted(unknown)}")
    return [
        decompose_zone(zone, aggregation.citywide, params)
        for zone in aggregation.zones
        if wanted is None or zone.zone_id in wanted
    ]


def areas_of_interest(
    aggregation: ZoneAggregation,
    attributes: Sequence[str] | None = None,
) -> dict[str, str]:
    """For each attribute, the zone with the highest mean; low-confidence zones are skipped."""
    names = list(attributes) if attributes is not None else ["car_count", *PROPORTION_ATTRIBUTES]
    unknown = set(names) - set(SEMANTIC_ATTRIBUTES)
    if unknown:
        raise ValueError(f"Unknown semantic attributes: {sorted(unknown)}")
    candidates = [zone for zone in aggregation.zones if not zone.low_confidence]
    out: dict[str, str] = {}
    for name in names:
        if candidates:
            best = max(candidates, key=lambda zone: (zone.attribute_mean(name), zone.zone_id))
            out[name] = best.zone_id
    return out
