from __future__ import annotations

import re
from pathlib import Path

import pytest

pytest.importorskip("PySide6")

from semcvdcm.spatial.aggregation import DeviationBar, ZoneDecomposition  # noqa: E402
from semcvdcm.spatial.export_pdf import (  # noqa: E402
    DEFAULT_PANELS_PER_PAGE,
    DecompositionItem,
    PdfExportOptions,
    build_decomposition_pages,
    build_decomposition_scene,
    ensure_application,
    export_decompositions_pdf,
    paginate,
)


def decomposition(zone_id: str) -> ZoneDecomposition:
    return ZoneDecomposition(
        zone_id=zone_id,
        bars=(
            DeviationBar("p_trees", 0.14),
            DeviationBar("p_car", -0.05),
            DeviationBar("p_building", 0.0),
        ),
        residual=0.01,
        total=0.10,
        highlighted_attribute="p_trees",
    )


def test_panel_rows_skip_the_reference_class() -> None:
    ensure_application()
    item = DecompositionItem(decomposition("Z1"), "p_building")

    assert [name for name, _ in item.rows] == ["p_trees", "p_car", "residual"]
    assert item.scale == pytest.approx(0.14)


def test_scene_stacks_one_panel_per_zone() -> None:
    scene = build_decomposition_scene([decomposition("Z1"), decomposition("Z2")], "p_building")

    assert len(scene.items()) == 2


def test_pdf_export_writes_a_pdf(tmp_path: Path) -> None:
    target = tmp_path / "nested" / "bars.pdf"

    pages = export_decompositions_pdf([decomposition("Z1")], "p_building", target)

    assert pages == 1

    assert target.read_bytes().startswith(b"%PDF")


def test_panels_are_split_across_pages() -> None:
    zones = [decomposition(f"Z{index}") for index in range(10)]

    chunks = paginate(zones, 4)
    scenes = build_decomposition_pages(zones, "p_building", 4)

    assert [len(chunk) for chunk in chunks] == [4, 4, 2]
    assert [len(scene.items()) for scene in scenes] == [4, 4, 2]
    assert chunks[2][0].zone_id == "Z8"
    assert len(paginate(zones)) == -(-10 // DEFAULT_PANELS_PER_PAGE)
    with pytest.raises(ValueError, match="panels_per_page"):
        paginate(zones, 0)


def test_pdf_has_one_page_per_panel_group(tmp_path: Path) -> None:
    target = tmp_path / "bars.pdf"
    zones = [decomposition(f"Z{index}") for index in range(7)]

    pages = export_decompositions_pdf(
        zones, "p_building", target, PdfExportOptions(panels_per_page=3, dpi=72)
    )

    assert pages == 3
    assert len(re.findall(rb"/Type\s*/Page\b", target.read_bytes())) == 3
