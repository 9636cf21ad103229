"""Self-contained SVG line charts for run CSVs.

Byte-deterministic for identical inputs: fixed canvas, fixed palette, no
timestamps or external assets.  Each recognized numeric column of the input
CSVs becomes one chart, with one polyline per input file (legend from the
file stem).
"""

from __future__ import annotations

import csv
from pathlib import Path

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 30, 45


class MalformedCsvError(ValueError):
    pass


def read_csv_columns(path) -> dict:
    """Header-keyed float columns; non-numeric cells become NaN."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or len(rows) < 2:
        raise MalformedCsvError(f"{path}: need a header row and at least one data row")
    header = rows[0]
    cols = {h: [] for h in header}
    for row in rows[1:]:
        if len(row) != len(header):
            raise MalformedCsvError(f"{path}: ragged row {row}")
        for h, cell in zip(header, row):
            try:
                cols[h].append(float(cell))
            except ValueError:
                cols[h].append(float("nan"))
    return cols


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in vals]


def write_line_chart(path, series, title: str, x_label: str, y_label: str) -> None:
    """series: list of (label, xs, ys) with equal-length float lists."""
    points = [
        (x, y)
        for _, xs, ys in series
        for x, y in zip(xs, ys)
        if x == x and y == y  # drop NaNs
    ]
    if points:
        xmin, xmax = min(p[0] for p in points), max(p[0] for p in points)
        ymin, ymax = min(p[1] for p in points), max(p[1] for p in points)
    else:
        xmin = xmax = ymin = ymax = 0.0
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymax = ymin + 1.0
    x0, x1 = MARGIN_L, WIDTH - MARGIN_R
    y0, y1 = HEIGHT - MARGIN_B, MARGIN_T

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="18" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="14" y="{(y0 + y1) // 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 14 {(y0 + y1) // 2})">{y_label}</text>',
        f'<text x="{x0}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="10">{_fmt(xmin)}</text>',
        f'<text x="{x1}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="10">{_fmt(xmax)}</text>',
        f'<text x="{x0 - 6}" y="{y0 + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{_fmt(ymin)}</text>',
        f'<text x="{x0 - 6}" y="{y1 + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{_fmt(ymax)}</text>',
    ]
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        keep = [(x, y) for x, y in zip(xs, ys) if x == x and y == y]
        if keep:
            sx = _scale([p[0] for p in keep], xmin, xmax, x0, x1)
            sy = _scale([p[1] for p in keep], ymin, ymax, y0, y1)
            if len(keep) > 1:
                pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(sx, sy))
                parts.append(
                    f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
                )
            else:
                parts.append(f'<circle cx="{_fmt(sx[0])}" cy="{_fmt(sy[0])}" r="3" fill="{color}"/>')
        ly = MARGIN_T + 14 * i
        parts.append(f'<line x1="{x1 - 130}" y1="{ly}" x2="{x1 - 110}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{x1 - 105}" y="{ly + 4}" font-family="sans-serif" font-size="11">{label}</text>'
        )
    parts.append("</svg>\n")
    Path(path).write_text("\n".join(parts))


def plot_csvs(csv_paths, out_dir) -> list:
    """One chart per shared numeric column across the inputs; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = []
    for p in csv_paths:
        cols = read_csv_columns(p)
        loaded.append((Path(p).stem, cols))
    written = []
    first_header = list(loaded[0][1].keys())
    x_key = first_header[0]
    for metric in first_header[1:]:
        series = []
        for stem, cols in loaded:
            if metric in cols and x_key in cols:
                series.append((stem, cols[x_key], cols[metric]))
        if not series:
            continue
        out = out_dir / f"{metric}.svg"
        write_line_chart(out, series, metric, x_key, metric)
        written.append(out)
    return written
