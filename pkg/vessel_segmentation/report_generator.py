"""
Purpose: Generate metric reports and figure artifacts

High-level Overview:
Creates rich console output (run headers, class histograms, metric tables,
manifest summaries), CSV and Markdown metric reports, the per-image figures of
the `report` command and the training loss curve.

Key Components:
- Rich console tables and panels with status emoji
- Metrics CSV/Markdown through pandas
- Heatmap via a matplotlib colormap, side-output maps, binary mask
- Error overlay: false negatives blue, false positives red, true positives green
- Loss curve rendered with matplotlib

Functions/Classes:
- `class ReportGenerator`: Report generation class
  - `__init__(self, console=None)`: Initialize with Rich console
  - `print_header(self, title, details)`: Run header panel
  - `print_class_histogram(self, counts)`: Pixel count and share per class
  - `print_metrics(self, metrics)`: Acc | Sp | Se | AUC table with stratified AUCs
  - `print_manifest_info(self, manifest, sizes)`: Entries per split and image sizes
  - `_get_metric_status(self, metric, value)`: Status emoji for a metric value
  - `write_metrics_csv(self, metrics, path)`: CSV with fixed columns
  - `generate_markdown_report(self, metrics, timing, output_path, title)`: Markdown report
  - `error_overlay(self, gray, pred, gt, fov)`: RGB overlay array
  - `write_report_images(self, image, prob, out_dir, gt, fov)`: The report figure set
  - `write_loss_curve(self, log, path)`: Loss curve PNG
"""

import math
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.figure import Figure
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from .config import Config
from .dataio import BinaryMask, DatasetManifest, FundusImage
from .evaluate import METRIC_COLUMNS, ProbabilityMap, binarize
from .training import TrainLog
from .utils.file_handler import FileHandler

HEATMAP_COLORMAP = "inferno"
TP_COLOR = (0, 255, 0)
FN_COLOR = (0, 0, 255)
FP_COLOR = (255, 0, 0)


class ReportGenerator:
    """Generate console, file and figure reports."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()
        self.files = FileHandler()

    def print_header(self, title: str, details: Dict[str, object]) -> None:
        """Print a run header panel."""
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        body = [f"[bold]Started:[/bold] {timestamp}"]
        body += [f"[bold]{key}:[/bold] {value}" for key, value in details.items()]
        self.console.print(Panel("\n".join(body), title=Text(title, style="bold blue"), border_style="blue"))

    def print_class_histogram(self, counts: Sequence[int]) -> None:
        total = int(sum(counts))
        table = Table(title="Class Histogram", show_header=True, header_style="bold magenta")
        table.add_column("Class", style="cyan")
        table.add_column("Name", style="cyan")
        table.add_column("Pixels", style="yellow", justify="right")
        table.add_column("Share", style="green", justify="right")
        for index, count in enumerate(counts):
            share = count / total if total else 0.0
            table.add_row(str(index), Config.CLASS_NAMES[index], f"{int(count):,}", f"{share:.2%}")
        table.add_row("", "[bold]total[/bold]", f"{total:,}", "100.00%" if total else "-")
        self.console.print(table)

    def print_metrics(self, metrics: pd.DataFrame) -> None:
        table = Table(title="Segmentation Metrics", show_header=True, header_style="bold magenta")
        table.add_column("Image", style="cyan")
        for column in METRIC_COLUMNS[1:]:
            table.add_column(column.replace("_", " "), style="yellow", justify="right")
        table.add_column("Status", style="green")
        for row in metrics.to_dict(orient="records"):
            cells = [_format(row[c]) for c in METRIC_COLUMNS[1:]]
            image = str(row["image"])
            if image in ("ALL", "mean"):
                image = f"[bold]{image}[/bold]"
            table.add_row(image, *cells, self._get_metric_status("AUC", row["AUC"]))
        self.console.print(table)

    def print_manifest_info(self, manifest: DatasetManifest, sizes: Dict[Tuple[int, int], int]) -> None:
        table = Table(title=f"Manifest {manifest.source}", show_header=True, header_style="bold magenta")
        table.add_column("Property", style="cyan")
        table.add_column("Value", style="yellow")
        table.add_row("Entries", str(len(manifest)))
        for split, count in manifest.splits().items():
            table.add_row(f"Split '{split}'", str(count))
        with_fov = sum(1 for entry in manifest if entry.fov is not None)
        table.add_row("FOV masks", f"{with_fov}/{len(manifest)}")
        for (height, width), count in sorted(sizes.items()):
            table.add_row("Image size", f"{width}x{height} ({count})")
        self.console.print(table)

    def _get_metric_status(self, metric: str, value: float) -> str:
        """Get status emoji for a metric value."""
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return "ℹ️"
        if metric.startswith("AUC"):
            return "✅" if value >= 0.95 else "⚠️" if value >= 0.85 else "❌"
        return "✅" if value >= 0.9 else "⚠️" if value >= 0.75 else "❌"

    def write_metrics_csv(self, metrics: pd.DataFrame, path: Path) -> Path:
        self.files.ensure_dir(Path(path).parent)
        metrics.to_csv(path, index=False, columns=METRIC_COLUMNS, float_format="%.6f")
        return Path(path)

    def generate_markdown_report(self, metrics: pd.DataFrame, timing: Optional[pd.DataFrame],
                                 output_path: Path, title: str = "Vessel Segmentation Report") -> Path:
        """Generate Markdown report file."""
        md_content = [f"# {title}", f"Generated on: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}", ""]

        md_content.append("## Metrics")
        md_content.append("| " + " | ".join(METRIC_COLUMNS) + " |")
        md_content.append("|" + "---|" * len(METRIC_COLUMNS))
        for row in metrics.to_dict(orient="records"):
            md_content.append("| " + " | ".join([str(row["image"])] + [_format(row[c]) for c in METRIC_COLUMNS[1:]]) + " |")
        md_content.append("")
        md_content.append("Boundary classes count as background. AUC uses p(thick) + p(thin) as the vessel score; "
                          "thick/thin AUCs use all non-vessel pixels as negatives.")
        md_content.append("")

        if timing is not None and len(timing):
            md_content.append("## Inference Time")
            md_content.append(f"- **Images**: {len(timing)}")
            md_content.append(f"- **Mean seconds per image**: {timing['seconds'].mean():.3f}")
            md_content.append(f"- **Total seconds**: {timing['seconds'].sum():.3f}")
            md_content.append("")

        Path(output_path).write_text("\n".join(md_content), encoding="utf-8")
        return Path(output_path)

    def error_overlay(self, gray: np.ndarray, pred: BinaryMask, gt: Optional[BinaryMask],
                      fov: Optional[BinaryMask] = None) -> np.ndarray:
        """Grayscale base with TP green, FN blue and FP red; without GT, predictions are green."""
        overlay = np.repeat(np.asarray(gray, dtype=np.uint8)[:, :, None], 3, axis=2)
        inside = fov.data if fov is not None else np.ones(pred.shape, dtype=bool)
        if gt is None:
            overlay[pred.data & inside] = TP_COLOR
            return overlay
        overlay[pred.data & gt.data & inside] = TP_COLOR
        overlay[~pred.data & gt.data & inside] = FN_COLOR
        overlay[pred.data & ~gt.data & inside] = FP_COLOR
        return overlay

    def write_report_images(self, image: FundusImage, prob: ProbabilityMap, out_dir: Path,
                            gt: Optional[BinaryMask] = None, fov: Optional[BinaryMask] = None) -> List[Path]:
        """Write fused heatmap, one map per side output, binary mask and error overlay."""
        out_dir = self.files.ensure_dir(out_dir)
        colormap = matplotlib.colormaps[HEATMAP_COLORMAP]
        score = np.clip(prob.vessel_score().astype(np.float64), 0.0, 1.0)
        heatmap = np.rint(colormap(score)[:, :, :3] * 255.0).astype(np.uint8)

        written = [self.files.save_rgb_png(heatmap, out_dir / "fused_heatmap.png")]
        for k, side in enumerate(prob.sides, start=1):
            side_score = np.clip(side[3] + side[4], 0.0, 1.0)
            written.append(self.files.save_gray_png(side_score, out_dir / f"side{k}.png"))

        mask = binarize(prob)
        written.append(self.files.save_gray_png(mask.data.astype(np.uint8) * 255, out_dir / "mask.png"))
        overlay = self.error_overlay(image.data[:, :, 1], mask, gt, fov)
        written.append(self.files.save_rgb_png(overlay, out_dir / "overlay.png"))
        return written

    def write_loss_curve(self, log: TrainLog, path: Path) -> Path:
        """Plot total, fused and side losses per epoch."""
        frame = log.to_frame()
        figure = Figure(figsize=(7, 4))
        axes = figure.subplots()
        axes.plot(frame["epoch"], frame["total"], label="total", linewidth=2)
        axes.plot(frame["epoch"], frame["fused"], label="fused")
        for k in range(1, log.num_sides + 1):
            axes.plot(frame["epoch"], frame[f"side{k}"], label=f"side{k}", linestyle="--", linewidth=1)
        axes.set_xlabel("epoch")
        axes.set_ylabel("loss")
        axes.set_yscale("log")
        axes.legend(loc="upper right", fontsize="small")
        axes.grid(True, alpha=0.3)
        figure.tight_layout()
        self.files.ensure_dir(Path(path).parent)
        figure.savefig(path, dpi=100)
        return Path(path)


def _format(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value:.4f}"
