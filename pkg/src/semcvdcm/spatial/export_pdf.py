from __future__ import annotations

import os
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from PySide6.QtCore import QLineF, QMarginsF, QRectF, Qt
from PySide6.QtGui import QColor, QFont, QPageLayout, QPageSize, QPainter, QPdfWriter, QPen
from PySide6.QtWidgets import (
    QApplication,
    QGraphicsItem,
    QGraphicsScene,
    QStyleOptionGraphicsItem,
    QWidget,
)

from .aggregation import ZoneDecomposition

PANEL_WIDTH = 520.0
ROW_HEIGHT = 18.0
LABEL_WIDTH = 110.0
VALUE_WIDTH = 70.0
PANEL_GAP = 24.0
DEFAULT_PANELS_PER_PAGE = 4

POSITIVE_COLOR = "#16a34a"
NEGATIVE_COLOR = "#dc2626"
RESIDUAL_COLOR = "#64748b"
HIGHLIGHT_COLOR = "#2563eb"


@dataclass
class PdfExportOptions:
    page_size: str = "A4"
    orientation: str = "portrait"
    margin_mm: float = 10.0
    fit_to_page: bool = True
    dpi: int = 300
    panels_per_page: int = DEFAULT_PANELS_PER_PAGE


def _page_size_id(value: str) -> QPageSize.PageSizeId:
    normalized = value.upper().strip()
    mapping: dict[str, QPageSize.PageSizeId] = {
        "A4": QPageSize.PageSizeId.A4,
        "A3": QPageSize.PageSizeId.A3,
        "LETTER": QPageSize.PageSizeId.Letter,
    }
    return mapping.get(normalized, QPageSize.PageSizeId.A4)


def ensure_application() -> QApplication:
    os.environ.setdefault("QT_QPA_PLATFORM", "offscreen")
    app = QApplication.instance()
    return app if isinstance(app, QApplication) else QApplication([])


class DecompositionItem(QGraphicsItem):
    """One zone panel: a horizontal bar per attribute around a zero axis, then the residual."""

    def __init__(self, decomposition: ZoneDecomposition, reference_class: str) -> None:
        super().__init__()
        self.decomposition = decomposition
        self.rows = [
            (bar.attribute, bar.delta)
            for bar in decomposition.bars
            if bar.attribute != reference_class
        ]
        self.rows.append(("residual", decomposition.residual))
        self.scale = max([abs(delta) for _, delta in self.rows] + [1e-12])

    @property
    def height(self) -> float:
        return ROW_HEIGHT * (len(self.rows) + 1) + 8.0

    def boundingRect(self) -> QRectF:
        return QRectF(0.0, 0.0, PANEL_WIDTH, self.height)

    def paint(
        self,
        painter: QPainter,
        option: QStyleOptionGraphicsItem,
        widget: QWidget | None = None,
    ) -> None:
        del option, widget

        painter.setRenderHint(QPainter.RenderHint.Antialiasing, True)
        painter.setPen(QPen(QColor("#cbd5e1"), 1))
        painter.setBrush(QColor("#f8fafc"))
        painter.drawRoundedRect(self.boundingRect(), 6, 6)

        painter.setFont(QFont("Helvetica", 9, weight=QFont.Weight.Bold))
        painter.setPen(QColor("#0f172a"))
        painter.drawText(
            QRectF(8, 2, PANEL_WIDTH - 16, ROW_HEIGHT),
            Qt.AlignmentFlag.AlignLeft | Qt.AlignmentFlag.AlignVCenter,
            f"Zone {self.decomposition.zone_id}   total {self.decomposition.total:+.4f}",
        )

        bar_area = PANEL_WIDTH - LABEL_WIDTH - VALUE_WIDTH - 16
        half = bar_area / 2
        axis_x = 8 + LABEL_WIDTH + half
        painter.setFont(QFont("Helvetica", 8))
        for row, (name, delta) in enumerate(self.rows, start=1):
            top = row * ROW_HEIGHT + 4
            painter.setPen(QColor("#334155"))
            painter.drawText(
                QRectF(8, top, LABEL_WIDTH, ROW_HEIGHT),
                Qt.AlignmentFlag.AlignLeft | Qt.AlignmentFlag.AlignVCenter,
                name,
            )
            length = abs(delta) / self.scale * half
            left = axis_x if delta >= 0 else axis_x - length
            if name == "residual":
                color = RESIDUAL_COLOR
            else:
                color = POSITIVE_COLOR if delta >= 0 else NEGATIVE_COLOR
            highlighted = name == self.decomposition.highlighted_attribute
            pen = QPen(QColor(HIGHLIGHT_COLOR), 2) if highlighted else Qt.PenStyle.NoPen
            painter.setPen(pen)
            painter.setBrush(QColor(color))
            painter.drawRect(QRectF(left, top + 3, length, ROW_HEIGHT - 6))
            painter.setPen(QColor("#334155"))
            painter.drawText(
                QRectF(PANEL_WIDTH - VALUE_WIDTH - 8, top, VALUE_WIDTH, ROW_HEIGHT),
                Qt.AlignmentFlag.AlignRight | Qt.AlignmentFlag.AlignVCenter,
                f"{delta:+.4f}",
            )
        painter.setPen(QPen(QColor("#0f172a"), 1))
        painter.drawLine(QLineF(axis_x, ROW_HEIGHT + 4, axis_x, self.height - 4))


def paginate(
    decompositions: Sequence[ZoneDecomposition], per_page: int = DEFAULT_PANELS_PER_PAGE
) -> list[list[ZoneDecomposition]]:
    if per_page < 1:
        raise ValueError("panels_per_page must be >= 1")
    items = list(decompositions)
    return [items[start : start + per_page] for start in range(0, len(items), per_page)]


def build_decomposition_scene(
    decompositions: Sequence[ZoneDecomposition], reference_class: str
) -> QGraphicsScene:
    """One page worth of panels stacked top to bottom."""
    ensure_application()
    scene = QGraphicsScene()
    y = 0.0
    for decomposition in decompositions:
        item = DecompositionItem(decomposition, reference_class)
        item.setPos(0.0, y)
        scene.addItem(item)
        y += item.height + PANEL_GAP
    return scene


def build_decomposition_pages(
    decompositions: Sequence[ZoneDecomposition],
    reference_class: str,
    per_page: int = DEFAULT_PANELS_PER_PAGE,
) -> list[QGraphicsScene]:
    return [
        build_decomposition_scene(page, reference_class)
        for page in paginate(decompositions, per_page)
    ]


def _scene_source(scene: QGraphicsScene, per_page: int) -> QRectF:
    # Pages share one scale: a short last page keeps the panel size of a full one.
    source = scene.itemsBoundingRect().adjusted(-20.0, -20.0, 20.0, 20.0)
    if source.isNull():
        return QRectF(0, 0, 100, 100)
    if per_page > 0 and scene.items():
        panel = max(item.boundingRect().height() for item in scene.items())
        full = per_page * (panel + PANEL_GAP) - PANEL_GAP + 40.0
        source.setHeight(max(source.height(), full))
    return source


def export_scenes_to_pdf(
    scenes: Sequence[QGraphicsScene],
    output_path: str | Path,
    options: PdfExportOptions | None = None,
) -> None:
    """Render each scene on its own page."""
    opts = options or PdfExportOptions()

    writer = QPdfWriter(str(output_path))
    writer.setResolution(opts.dpi)

    orientation = (
        QPageLayout.Orientation.Landscape
        if opts.orientation.lower() == "landscape"
        else QPageLayout.Orientation.Portrait
    )

    page_layout = QPageLayout(
        QPageSize(_page_size_id(opts.page_size)),
        orientation,
        QMarginsF(opts.margin_mm, opts.margin_mm, opts.margin_mm, opts.margin_mm),
        QPageLayout.Unit.Millimeter,
    )
    writer.setPageLayout(page_layout)

    target_rect = QRectF(page_layout.paintRectPixels(writer.resolution()))
    mode = (
        Qt.AspectRatioMode.KeepAspectRatio
        if opts.fit_to_page
        else Qt.AspectRatioMode.IgnoreAspectRatio
    )

    painter = QPainter(writer)
    try:
        for index, scene in enumerate(scenes):
            if index:
                writer.newPage()
            source = _scene_source(scene, opts.panels_per_page)
            target = QRectF(target_rect)
            if opts.fit_to_page:
                # anchor at the top of the page instead of centring vertically
                fitted = target.width() * source.height() / source.width()
                target.setHeight(min(target.height(), fitted))
            scene.render(painter, target, source, mode)
    finally:
        painter.end()


def export_decompositions_pdf(
    decompositions: Sequence[ZoneDecomposition],
    reference_class: str,
    output_path: str | Path,
    options: PdfExportOptions | None = None,
) -> int:
    """Write the bar charts, panels_per_page zones per page. Returns the page count."""
    opts = options or PdfExportOptions()
    target = Path(output_path)
    target.parent.mkdir(parents=True, exist_ok=True)
    scenes = build_decomposition_pages(decompositions, reference_class, opts.panels_per_page)
    if not scenes:
        scenes = [build_decomposition_scene([], reference_class)]
    export_scenes_to_pdf(scenes, target, opts)
    return len(scenes)
