"""Result documents: metric reports, benchmark tables and run manifests."""
import math
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from app import __version__

TOOL_NAME = "fpnr"


class MetricReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    psnr_db: Optional[float] = None
    roughness: float = Field(..., ge=0)
    frame_index: Optional[int] = None


class MetricCell(BaseModel):
    """Mean PSNR/roughness of one method on one noise level."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    psnr_db: Optional[float] = None
    roughness: float
    frames: int = Field(..., ge=0)
    best_psnr: bool = False
    best_roughness: bool = False

    def render(self) -> str:
        psnr = "-" if self.psnr_db is None else f"{self.psnr_db:.2f}"
        if self.best_psnr:
            psnr = f"*{psnr}"
        rough = f"{self.roughness:.4f}"
        if self.best_roughness:
            rough = f"*{rough}"
        return f"{psnr}/{rough}"


class BenchRow(BaseModel):
    sigma_g: float
    sigma_o: float
    cells: Dict[str, MetricCell]


def mean_cell(reports: List[MetricReport]) -> MetricCell:
    """Average a list of per-frame reports into one cell."""
    psnrs = [r.psnr_db for r in reports if r.psnr_db is not None]
    finite = [p for p in psnrs if math.isfinite(p)]
    if not psnrs:
        psnr = None
    elif len(finite) < len(psnrs):
        psnr = math.inf
    else:
        psnr = sum(finite) / len(finite)
    roughness = sum(r.roughness for r in reports) / len(reports) if reports else 0.0
    return MetricCell(psnr_db=psnr, roughness=roughness, frames=len(reports))


class BenchTable(BaseModel):
    """Mean PSNR (dB) / roughness per noise level; first column is the corrupted input."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    columns: List[str]
    rows: List[BenchRow] = Field(default_factory=list)

    def add_row(self, sigma_g: float, sigma_o: float, cells: Dict[str, MetricCell]) -> BenchRow:
        missing = [c for c in self.columns if c not in cells]
        if missing:
            raise ValueError(f"Row ({sigma_g}, {sigma_o}) lacks columns {missing}")
        row = BenchRow(sigma_g=sigma_g, sigma_o=sigma_o, cells={c: cells[c] for c in self.columns})
        self.rows.append(row)
        return row

    def row(self, sigma_g: float, sigma_o: float) -> BenchRow:
        for row in self.rows:
            if row.sigma_g == sigma_g and row.sigma_o == sigma_o:
                return row
        raise KeyError((sigma_g, sigma_o))

    def mark_best(self) -> None:
        """Mark the best method cell per row: highest PSNR, lowest roughness.

        The corrupted column never competes. Rows with a single column are left unmarked.
        """
        methods = [c for c in self.columns if c != "corrupted"]
        if not methods:
            return
        for row in self.rows:
            for cell in row.cells.values():
                cell.best_psnr = cell.best_roughness = False
            scored = [m for m in methods if row.cells[m].psnr_db is not None]
            if scored:
                best = max(scored, key=lambda m: (row.cells[m].psnr_db, -methods.index(m)))
                row.cells[best].best_psnr = True
            best_rough = min(methods, key=lambda m: (row.cells[m].roughness, methods.index(m)))
            row.cells[best_rough].best_roughness = True

    def to_text(self) -> str:
        header = ["sigma_g/sigma_o"] + self.columns
        body = [
            [f"{row.sigma_g:g}/{row.sigma_o:g}"] + [row.cells[c].render() for c in self.columns]
            for row in self.rows
        ]
        widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
        lines = ["  ".join(cell.rjust(widths[i]) for i, cell in enumerate(line)) for line in [header] + body]
        lines.append("* best result per noise level (PSNR dB / roughness)")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        header = ["sigma_g", "sigma_o"]
        for column in self.columns:
            header += [f"{column}_psnr_db", f"{column}_roughness", f"{column}_frames",
                       f"{column}_best_psnr", f"{column}_best_roughness"]
        lines = [",".join(header)]
        for row in self.rows:
            fields = [f"{row.sigma_g:g}", f"{row.sigma_o:g}"]
            for column in self.columns:
                cell = row.cells[column]
                fields += [
                    "" if cell.psnr_db is None else repr(float(cell.psnr_db)),
                    repr(float(cell.roughness)),
                    str(cell.frames),
                    str(int(cell.best_psnr)),
                    str(int(cell.best_roughness)),
                ]
            lines.append(",".join(fields))
        return "\n".join(lines) + "\n"


def curve_csv(points: List[MetricReport]) -> str:
    """Per-frame convergence curve as CSV."""
    lines = ["frame_index,psnr_db,roughness"]
    for index, report in enumerate(points):
        frame = report.frame_index if report.frame_index is not None else index
        psnr = "" if report.psnr_db is None else repr(float(report.psnr_db))
        lines.append(f"{frame},{psnr},{report.roughness!r}")
    return "\n".join(lines) + "\n"


class RunManifest(BaseModel):
    """Everything needed to reproduce an artifact."""

    tool: str = TOOL_NAME
    version: str = __version__
    command: str
    config: Dict[str, Any]
    seeds: Dict[str, Optional[int]] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    created_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
