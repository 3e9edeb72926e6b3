"""Plain-text result tables and SVG density plots for a LinkageReport.

The SVG is written by hand from the density curves stored in the report,
so no plotting library is needed.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence
from xml.sax.saxutils import escape

from .errors import OneClassOnly
from .io import atomic_write_text
from .linkage.evaluation import LinkageReport, MeasureResult

logger = logging.getLogger(__name__)

COLORS = {"intra": "#1f77b4", "inter": "#d62728", "tau": "#333333"}


def results_table(report: LinkageReport) -> str:
    """Fixed-width table with one row per measure: AUC, sensitivity, specificity."""
    header = f"{'Measure':<10} {'AUC':>7} {'Sens':>7} {'Spec':>7} {'Overlap':>8} {'tau':>12}  Method"
    lines = [
        f"Dataset: {report.dataset_id or '-'}  pairs={report.n_pairs} intra={report.n_intra} inter={report.n_inter}",
        header,
        "-" * len(header),
    ]
    for name, r in report.measures.items():
        lines.append(
            f"{name:<10} {r.auc:7.3f} {r.sensitivity:7.3f} {r.specificity:7.3f} {r.overlap:8.3f} "
            f"{r.tau:12.6g}  {r.method}"
        )
    return "\n".join(lines) + "\n"


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if not hi > lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out = []
    k = 0
    while first + k * step <= hi + 1e-12 * abs(hi):
        out.append(first + k * step)
        k += 1
    return out


def density_svg(result: MeasureResult, width: int = 640, height: int = 400) -> str:
    """Intra and inter densities of one measure with the threshold marked."""
    curves = result.curves
    grid: Sequence[float] = curves.get("grid", [])
    if len(grid) < 2:
        raise ValueError(f"{result.measure}: report has no density curves to plot")
    left, right, top, bottom = 60, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = float(grid[0]), float(grid[-1])
    ymax = max(max(curves.get(k, [0.0])) for k in ("intra", "inter")) or 1.0

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - y / (ymax * 1.05) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">'
        f"{escape(result.measure)}: AUC {result.auc:.3f}, sensitivity {result.sensitivity:.3f}, "
        f"specificity {result.specificity:.3f}</text>",
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        x = sx(t)
        parts.append(f'<line x1="{x:.1f}" y1="{top + ph}" x2="{x:.1f}" y2="{top + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{top + ph + 18}" text-anchor="middle">{t:.4g}</text>')
    parts.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">similarity score</text>'
    )
    parts.append(
        f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {top + ph / 2:.1f})">density</text>'
    )
    for key in ("inter", "intra"):
        ys = curves.get(key)
        if not ys:
            continue
        pts = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(grid, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{COLORS[key]}" stroke-width="2"/>')
    if math.isfinite(result.tau) and x0 <= result.tau <= x1:
        x = sx(result.tau)
        parts.append(
            f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{top + ph}" stroke="{COLORS["tau"]}" '
            f'stroke-dasharray="6,4"/>'
        )
        parts.append(f'<text x="{x + 4:.2f}" y="{top + 12}">tau = {result.tau:.4g}</text>')
    legend_x = left + pw - 130
    for k, key in enumerate(("intra", "inter")):
        y = top + 10 + 18 * k
        parts.append(
            f'<line x1="{legend_x}" y1="{y}" x2="{legend_x + 24}" y2="{y}" stroke="{COLORS[key]}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{legend_x + 30}" y="{y + 4}">{key}-subject</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(report: LinkageReport, out_dir) -> Dict[str, Path]:
    """Write ``<measure>.svg`` for every measure plus ``table.txt`` under ``out_dir``.

    Refuses (OneClassOnly) when either pair class is empty, since the
    densities and rates would be meaningless.
    """
    if report.n_intra == 0 or report.n_inter == 0:
        raise OneClassOnly(f"report needs both classes (intra={report.n_intra}, inter={report.n_inter})")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}
    for name, result in report.measures.items():
        path = out / f"{name}.svg"
        atomic_write_text(path, density_svg(result))
        written[name] = path
    table = out / "table.txt"
    atomic_write_text(table, results_table(report))
    written["table"] = table
    logger.info("wrote %d plots and a table to %s", len(report.measures), out)
    return written
