"""Post-hoc analysis of metrics CSVs: double-descent episodes and SVG curves."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from ..metrics import DoubleDescentEpisode, detect_double_descent

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


class MetricsFormatError(ValueError):
    pass


def read_metrics(path, columns: Sequence[str]) -> tuple[list[int], dict[str, list[float]]]:
    """Parse the epoch column plus ``columns`` from a metrics CSV."""
    path = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MetricsFormatError(f"{path}: empty file (no header)") from None
        wanted = ["epoch", *columns]
        for col in wanted:
            if col not in header:
                raise MetricsFormatError(f"{path}: unknown column {col!r}; have {header}")
        pos = {col: header.index(col) for col in wanted}
        epochs, values = [], {c: [] for c in columns}
        for rowno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise MetricsFormatError(
                    f"{path}: row {rowno} has {len(row)} fields, header has {len(header)}")
            for col in wanted:
                cell = row[pos[col]]
                try:
                    v = float(cell)
                except ValueError:
                    raise MetricsFormatError(
                        f"{path}: row {rowno}, column {col!r}: cannot parse {cell!r}") from None
                if col == "epoch":
                    epochs.append(int(v))
                else:
                    values[col].append(v)
    return epochs, values


@dataclass
class AnalysisReport:
    column: str
    drop_threshold: float
    recovery_fraction: float
    epochs: int
    episodes: list

    def to_dict(self) -> dict:
        d = asdict(self)
        d["episodes"] = [asdict(e) for e in self.episodes]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def text(self) -> str:
        lines = [f"{self.column}: {self.epochs} epochs, drop >= {self.drop_threshold:g}, "
                 f"recovery >= {self.recovery_fraction:g}"]
        if not self.episodes:
            lines.append("no double-descent episodes")
        for i, e in enumerate(self.episodes, 1):
            lines.append(f"episode {i}: peak epoch {e.peak_epoch}, trough epoch {e.trough_epoch}, "
                         f"recovery epoch {e.recovery_epoch}, drop {e.drop:.4f}, "
                         f"recovered {e.recovered_fraction:.0%}")
        return "\n".join(lines) + "\n"


def analyze(metrics_csv, drop_threshold: float = 0.05, recovery_fraction: float = 0.8,
            column: str = "robust_acc") -> AnalysisReport:
    epochs, values = read_metrics(metrics_csv, [column])
    if len(epochs) < 3:
        raise MetricsFormatError(f"{metrics_csv}: need at least 3 rows, found {len(epochs)}")
    episodes: list[DoubleDescentEpisode] = detect_double_descent(
        values[column], drop_threshold, recovery_fraction, epochs)
    return AnalysisReport(column, drop_threshold, recovery_fraction, len(epochs), episodes)


def _ticks(lo: float, hi: float, count: int) -> list[float]:
    if count <= 1 or hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def render_svg(epochs: Sequence[int], series: dict, width: int = 640, height: int = 360,
               title: str = "") -> str:
    """Line chart: one polyline (with point markers) per series, epochs on x."""
    left, right, top, bottom = 56, 150, 28, 40
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = min(epochs), max(epochs)
    ys = [v for vals in series.values() for v in vals]
    y0, y1 = min(ys), max(ys)
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(e):
        return left + (pw / 2 if x1 == x0 else (e - x0) / (x1 - x0) * pw)

    def sy(v):
        return top + (1 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{left}" y="16" font-size="13">{_esc(title)}</text>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')

    step = max(1, -(-(x1 - x0) // 10))
    for e in range(x0, x1 + 1, step):
        x = sx(e)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{e}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 6}" text-anchor="middle">epoch</text>')
    for v in _ticks(y0, y1, 5):
        y = sy(v)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{v:.3g}</text>')

    for i, (name, vals) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(e):.2f},{sy(v):.2f}" for e, v in zip(epochs, vals))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        for e, v in zip(epochs, vals):
            out.append(f'<circle cx="{sx(e):.2f}" cy="{sy(v):.2f}" r="2" fill="{color}"/>')
        ly = top + 8 + 16 * i
        lx = left + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly + 4}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def plot(metrics_csv, columns: Sequence[str], out_svg, title: str = "") -> Path:
    """Render the chosen metric columns of a metrics CSV to an SVG file."""
    columns = list(columns)
    if not columns:
        raise ValueError("no columns requested")
    epochs, values = read_metrics(metrics_csv, columns)
    if not epochs:
        raise MetricsFormatError(f"{metrics_csv}: no data rows")
    svg = render_svg(epochs, values, title=title)
    out = Path(out_svg)
    out.write_text(svg, encoding="utf-8")
    return out
