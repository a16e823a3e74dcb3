# src/services/reporting.py
"""
Report Emission

Renders ablation grids and evaluation results as CSV, summary JSON and
aligned plain-text tables (rows = axis values, columns = shot counts).

Version: 1.0.0
"""
import csv
import io
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from src.models.reports import AblationGrid, CellStatus, CellSummary, EvalResult
from src.utils.artifact_store import (
    PathLike,
    read_json,
    write_json_atomic,
    write_text_atomic,
)
from src.utils.errors import ArtifactError
from src.utils.logging import get_logger

logger = get_logger(__name__)

CSV_COLUMNS = ("index", "axis_value", "shots", "seed", "top1", "top5", "weights_used", "status")

GRID_SUFFIX = ".grid.json"


class ReportFormatter:
    """Formats grids and evaluation results as aligned text tables."""

    MISSING = "-"

    def __init__(self, percent: bool = True) -> None:
        self.percent = percent

    def _fmt(self, value: Optional[float]) -> str:
        if value is None:
            return self.MISSING
        return f"{value * 100:.2f}" if self.percent else f"{value:.4f}"

    def _cell(self, summary: CellSummary) -> str:
        if summary.mean_top1 is None:
            return self.MISSING
        text = f"{self._fmt(summary.mean_top1)}±{self._fmt(summary.std_top1)}"
        if summary.n_failed:
            text += f" ({summary.n_failed} failed)"
        return text

    @staticmethod
    def _align(rows: List[List[str]]) -> str:
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = []
        for n, row in enumerate(rows):
            cells = [row[0].ljust(widths[0])]
            cells.extend(cell.rjust(width) for cell, width in zip(row[1:], widths[1:]))
            lines.append("  ".join(cells).rstrip())
            if n == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def format_grid(self, grid: AblationGrid) -> str:
        """
        Top-1 mean±std per (axis value, shots), then direction checks,
        α-shape checks and any extra measurements.
        """
        summaries = {(s.axis_value, s.shots): s for s in grid.summaries()}
        header = [grid.axis.value] + [f"shot-{k}" for k in grid.shots]
        rows = [header]
        for value in grid.axis_values:
            rows.append([value] + [self._cell(summaries[(value, k)]) for k in grid.shots])

        unit = "%" if self.percent else "fraction"
        parts = [
            f"top-1 accuracy ({unit}, mean±std over {len(grid.seeds)} seeds)",
            self._align(rows),
        ]
        for check in grid.direction_checks:
            improvement = (
                self.MISSING if check.mean_improvement is None
                else f"{check.mean_improvement * 100:+.2f}"
            )
            parts.append(
                f"shot-{check.shots}: flier - finetune = {improvement} "
                f"(wins {check.wins}/{check.seeds}, "
                f"ordering {'holds' if check.ordering_holds else 'does not hold'}, "
                f"sign test {'passes' if check.sign_test_passes else 'fails'})"
            )
        for shape in grid.alpha_shape_checks:
            interior = ", ".join(
                f"{alpha}: {self._fmt(value)}" for alpha, value in shape.interior_means.items()
            )
            parts.append(
                f"shot-{shape.shots}: interior α ({interior}) vs α={shape.reference_alpha} "
                f"({self._fmt(shape.reference_mean)}): "
                f"interior optimum {'holds' if shape.holds else 'does not hold'}"
            )
        for key, values in sorted(grid.extra.items()):
            if isinstance(values, dict):
                shown = ", ".join(
                    f"shot-{k}: {self._fmt(v)}" for k, v in values.items()
                )
                parts.append(f"{key}: {shown}")
        return "\n".join(parts) + "\n"

    def format_eval(self, results: Dict[str, EvalResult]) -> str:
        """One row per weight set: top-1, top-5, n_test."""
        rows = [["weights", "top-1", "top-5", "n_test"]]
        for label, result in results.items():
            rows.append(
                [label, self._fmt(result.top1), self._fmt(result.top5), str(result.n_test)]
            )
        return self._align(rows) + "\n"


def grid_csv(grid: AblationGrid) -> str:
    """One row per cell, in cell-index order."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for cell in grid.cells:
        writer.writerow(
            {
                "index": cell.index,
                "axis_value": cell.axis_value,
                "shots": cell.shots,
                "seed": cell.seed,
                "top1": "" if cell.top1 is None else repr(cell.top1),
                "top5": "" if cell.top5 is None else repr(cell.top5),
                "weights_used": cell.weights_used.value if cell.weights_used else "",
                "status": cell.status.value,
            }
        )
    return buffer.getvalue()


def grid_summary(grid: AblationGrid) -> Dict[str, Any]:
    """Per-cell mean/std, test-split hash, direction and α-shape checks, failures."""
    return {
        "axis": grid.axis.value,
        "axis_values": grid.axis_values,
        "shots": grid.shots,
        "seeds": grid.seeds,
        "test_split_hash": grid.test_split_hash,
        "cells": [s.model_dump(mode="json") for s in grid.summaries()],
        "direction_checks": [c.model_dump(mode="json") for c in grid.direction_checks],
        "alpha_shape_checks": [c.model_dump(mode="json") for c in grid.alpha_shape_checks],
        "extra": grid.extra,
        "failed_cells": [
            {"index": c.index, "error": c.error}
            for c in grid.cells
            if c.status == CellStatus.ERROR
        ],
    }


def report_basename(grid: AblationGrid, timestamp: Optional[datetime] = None) -> str:
    """ablation_<axis>_<UTC timestamp>"""
    when = timestamp or datetime.now(timezone.utc)
    return f"ablation_{grid.axis.value}_{when.strftime('%Y%m%dT%H%M%SZ')}"


def save_grid(
    report_dir: PathLike, grid: AblationGrid, timestamp: Optional[datetime] = None
) -> Dict[str, Path]:
    """
    Write the full grid (JSON), its CSV, summary JSON and text table.

    Returns:
        Written paths keyed by kind ("grid", "csv", "summary", "table")
    """
    root = Path(report_dir)
    base = report_basename(grid, timestamp)
    paths = {
        "grid": write_text_atomic(
            root / f"{base}{GRID_SUFFIX}",
            json.dumps(grid.model_dump(mode="json"), sort_keys=True, indent=2) + "\n",
        ),
        "csv": write_text_atomic(root / f"{base}.csv", grid_csv(grid)),
        "summary": write_json_atomic(root / f"{base}.summary.json", grid_summary(grid)),
        "table": write_text_atomic(root / f"{base}.txt", ReportFormatter().format_grid(grid)),
    }
    logger.info("ablation_report_saved", base=base, directory=str(root))
    return paths


def load_grid(path: PathLike) -> AblationGrid:
    """
    Raises:
        MissingArtifactError: If the file is absent
        ArtifactError: If it is not a valid grid
    """
    try:
        return AblationGrid.model_validate(read_json(path, "ablate"))
    except ValidationError as e:
        raise ArtifactError(path, "parse error: invalid ablation grid") from e


def find_grids(report_dir: PathLike) -> List[Path]:
    """Saved grids in a report directory, sorted by file name."""
    return sorted(Path(report_dir).glob(f"ablation_*{GRID_SUFFIX}"))
