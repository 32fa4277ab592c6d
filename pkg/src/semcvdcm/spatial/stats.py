from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from semcvdcm.model.entities import SEMANTIC_ATTRIBUTES
from semcvdcm.model.storage import StorageError

from .aggregation import ZoneReport

UNDEFINED = "undefined"
HISTOGRAM_BINS = 10
MIN_ZONES = 3

ZONE_VARIABLES = (
    "mean_utility",
    *(f"mean_{name}" for name in SEMANTIC_ATTRIBUTES),
    "mean_residual",
)


@dataclass(frozen=True)
class JointStats:
    """Pearson correlations, summaries and histograms over zone-level variables.

    ``correlation[i][j]`` is None when either variable has zero variance.
    """

    variables: tuple[str, ...]
    correlation: tuple[tuple[float | None, ...], ...]
    summary: pd.DataFrame
    histograms: pd.DataFrame

    def pearson(self, first: str, second: str) -> float | None:
        return self.correlation[self.variables.index(first)][self.variables.index(second)]


def zone_frame(zones: Sequence[ZoneReport]) -> pd.DataFrame:
    return pd.DataFrame([zone.to_dict() for zone in zones]).set_index("zone_id")


def pearson_matrix(values: np.ndarray) -> list[list[float | None]]:
    """Column-wise Pearson correlation; zero-variance columns give None instead of NaN."""
    centred = values - values.mean(axis=0)
    norms = np.sqrt((centred**2).sum(axis=0))
    cross = centred.T @ centred
    n_columns = values.shape[1]
    out: list[list[float | None]] = []
    for i in range(n_columns):
        row: list[float | None] = []
        for j in range(n_columns):
            if norms[i] == 0.0 or norms[j] == 0.0:
                row.append(None)
            else:
                row.append(float(np.clip(cross[i, j] / (norms[i] * norms[j]), -1.0, 1.0)))
        out.append(row)
    return out


def _histograms(frame: pd.DataFrame, bins: int) -> pd.DataFrame:
    records = []
    for variable in frame.columns:
        counts, edges = np.histogram(frame[variable].to_numpy(dtype=np.float64), bins=bins)
        records.extend(
            {
                "variable": variable,
                "bin_left": float(edges[index]),
                "bin_right": float(edges[index + 1]),
                "count": int(count),
            }
            for index, count in enumerate(counts)
        )
    return pd.DataFrame(records, columns=["variable", "bin_left", "bin_right", "count"])


def joint_distribution_stats(
    zones: Sequence[ZoneReport],
    variables: Sequence[str] = ZONE_VARIABLES,
    bins: int = HISTOGRAM_BINS,
) -> JointStats:
    if len(zones) < MIN_ZONES:
        raise ValueError(f"Joint statistics need at least {MIN_ZONES} zones, got {len(zones)}")
    frame = zone_frame(zones).loc[:, list(variables)]
    values = frame.to_numpy(dtype=np.float64)
    summary = pd.DataFrame(
        {
            "variable": list(variables),
            "min": values.min(axis=0),
            "max": values.max(axis=0),
            "mean": values.mean(axis=0),
            "std": values.std(axis=0),
        }
    )
    return JointStats(
        variables=tuple(variables),
        correlation=tuple(tuple(row) for row in pearson_matrix(values)),
        summary=summary,
        histograms=_histograms(frame, bins),
    )


def write_joint_stats(stats: JointStats, directory: str | Path) -> dict[str, Path]:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    paths = {
        "correlation": root / "correlation.csv",
        "distribution": root / "distribution.csv",
        "histograms": root / "histograms.csv",
    }
    matrix = pd.DataFrame(
        [[UNDEFINED if value is None else value for value in row] for row in stats.correlation],
        index=pd.Index(stats.variables, name="variable"),
        columns=list(stats.variables),
    )
    try:
        matrix.to_csv(paths["correlation"], lineterminator="\n")
        stats.summary.to_csv(paths["distribution"], index=False, lineterminator="\n")
        stats.histograms.to_csv(paths["histograms"], index=False, lineterminator="\n")
    except OSError as exc:
        raise StorageError(f"Could not write joint statistics to {root}") from exc
    return paths
