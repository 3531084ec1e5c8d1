"""CSV and SVG writers (no plotting dependency)."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def fmt(value) -> str:
    """Floats at 12 significant digits; everything else via ``str``."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_trajectory(path: str | Path, traj) -> Path:
    return write_csv(path, ("t", "observable_name", "value"), traj.rows())


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_svg(path: str | Path, series: Sequence[tuple], title: str = "", xlabel: str = "",
              ylabel: str = "", width: int = 720, height: int = 480) -> Path:
    """Line plot; ``series`` holds ``(x, y, colour_or_None, label_or_None)``."""
    ml, mr, mt, mb = 70, 20, 40, 55
    xs = np.concatenate([np.asarray(s[0], float) for s in series]) if series else np.array([0.0, 1.0])
    ys = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.array([0.0, 1.0])
    x0, x1 = float(np.nanmin(xs)), float(np.nanmax(xs))
    y0, y1 = float(np.nanmin(ys)), float(np.nanmax(ys))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (np.asarray(x, float) - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (np.asarray(y, float) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{px(fx):.1f}" y="{mt + ph + 18}" font-size="11" text-anchor="middle">{fx:.4g}</text>')
        out.append(f'<text x="{ml - 6}" y="{py(fy) + 4:.1f}" font-size="11" text-anchor="end">{fy:.4g}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 12}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{width / 2}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>')
    legend_y = mt + 14
    for i, s in enumerate(series):
        x, y = np.asarray(s[0], float), np.asarray(s[1], float)
        colour = s[2] if len(s) > 2 and s[2] else PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(y)) if np.isfinite(a) and np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{pts}"/>')
        if len(s) > 3 and s[3]:
            out.append(f'<text x="{ml + pw - 8}" y="{legend_y}" font-size="11" fill="{colour}" '
                       f'text-anchor="end">{escape(s[3])}</text>')
            legend_y += 14
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
