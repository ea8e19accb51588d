"""Static saliency-map rendering: SVG (primary), binary PPM fallback, and CSV.

Panels are stacked top to bottom and share the time axis: the raw data,
the per-step labels with the ground-truth mask, then one heatmap per method.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

CELL = 8
LEFT, TOP, GAP = 90, 30, 18
FEATURE_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def diverging_rgb(v):
    """Map ``v`` in ``[-1, 1]`` to white-red (positive) / white-blue (negative)."""
    v = float(np.clip(v, -1.0, 1.0))
    fade = int(round(255 * (1.0 - abs(v))))
    return (255, fade, fade) if v >= 0 else (fade, fade, 255)


def _hex(rgb):
    return "#%02x%02x%02x" % rgb


def _normalize(m):
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    return m / scale if scale > 0 else np.zeros_like(m)


def _panels(sample, maps):
    D, T = sample.values.shape
    panels = [("data", "data", sample.values)]
    lab = sample.labels[None].astype(float)
    if sample.gt_importance is not None:
        panels.append(("labels", "labels + ground truth", np.vstack([lab, sample.gt_importance])))
    else:
        panels.append(("labels", "labels", lab))
    for name, m in maps.items():
        panels.append((name, f"{name} importance", np.asarray(m, dtype=float)))
    return panels


def _provenance_text(provenance):
    return " ".join(f"{k}={v}" for k, v in sorted((provenance or {}).items()))


def render_svg(sample, maps, provenance=None) -> str:
    """SVG document for one sample; ``maps`` is an ordered ``{method: (D, T) matrix}``."""
    D, T = sample.values.shape
    width = LEFT + T * CELL + 20
    panels = _panels(sample, maps)
    out = io.StringIO()
    y = TOP
    body = []
    for key, title, m in panels:
        body.append(f'<text x="4" y="{y - 4}" font-size="11" font-family="sans-serif">{title}</text>')
        if key == "data":
            h = 60
            lo, hi = float(m.min()), float(m.max())
            span = hi - lo or 1.0
            body.append(f'<rect x="{LEFT}" y="{y}" width="{T * CELL}" height="{h}" fill="none" stroke="#999"/>')
            for d in range(D):
                pts = " ".join(
                    f"{LEFT + (t + 0.5) * CELL:.1f},{y + h - (m[d, t] - lo) / span * h:.2f}" for t in range(T)
                )
                color = FEATURE_COLORS[d % len(FEATURE_COLORS)]
                body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1"/>')
                body.append(f'<text x="4" y="{y + 12 + 11 * d}" font-size="9" fill="{color}">feature {d}</text>')
            y += h + GAP
            continue
        norm = m if key == "labels" else _normalize(m)
        for r in range(m.shape[0]):
            if key == "labels":
                row_name = "label" if r == 0 else f"gt {r - 1}"
            else:
                row_name = f"feature {r}"
            body.append(f'<text x="{LEFT - 4}" y="{y + r * CELL + CELL - 1}" font-size="8" text-anchor="end">{row_name}</text>')
            for t in range(T):
                body.append(
                    f'<rect x="{LEFT + t * CELL}" y="{y + r * CELL}" width="{CELL}" height="{CELL}" '
                    f'fill="{_hex(diverging_rgb(norm[r, t]))}"/>'
                )
        y += m.shape[0] * CELL + GAP
    caption = f"sample {sample.id}"
    if sample.gt_importance is None:
        caption += " (ground truth not available; panel omitted)"
    body.append(f'<text x="4" y="{y + 4}" font-size="10" font-family="sans-serif">{caption}</text>')
    height = y + 14
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
              f'viewBox="0 0 {width} {height}">\n')
    if provenance:
        out.write(f"<!-- {_provenance_text(provenance)} -->\n")
    out.write(f'<rect width="{width}" height="{height}" fill="white"/>\n')
    out.write("\n".join(body))
    out.write("\n</svg>\n")
    return out.getvalue()


def render_ppm(sample, maps, cell=4, provenance=None) -> bytes:
    """Binary PPM raster of the same panels; the data panel is drawn as a heatmap."""
    D, T = sample.values.shape
    rows = []
    for key, _, m in _panels(sample, maps):
        norm = m if key == "labels" else _normalize(m - m.mean() if key == "data" else m)
        block = np.array([[diverging_rgb(v) for v in row] for row in norm], dtype=np.uint8)
        rows.append(np.repeat(np.repeat(block, cell, axis=0), cell, axis=1))
        rows.append(np.full((cell * 2, T * cell, 3), 255, dtype=np.uint8))
    img = np.concatenate(rows[:-1], axis=0)
    h, w, _ = img.shape
    comment = f"# {_provenance_text(provenance)}\n" if provenance else ""
    return f"P6\n{comment}{w} {h}\n255\n".encode("ascii") + img.tobytes()


def render_csv(sample, maps, provenance=None) -> str:
    buf = io.StringIO()
    if provenance:
        buf.write(f"# {_provenance_text(provenance)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["panel", "row", "time", "value"])
    for key, _, m in _panels(sample, maps):
        for r in range(m.shape[0]):
            for t in range(m.shape[1]):
                w.writerow([key, r, t, repr(float(m[r, t]))])
    return buf.getvalue()


def render_sample(sample, maps, out_dir, stem=None, provenance=None):
    """Write ``<stem>.svg``, ``<stem>.ppm`` and ``<stem>.csv``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"saliency-{sample.id}"
    paths = [out_dir / f"{stem}.svg", out_dir / f"{stem}.ppm", out_dir / f"{stem}.csv"]
    paths[0].write_text(render_svg(sample, maps, provenance), encoding="utf-8")
    paths[1].write_bytes(render_ppm(sample, maps, provenance=provenance))
    paths[2].write_text(render_csv(sample, maps, provenance), encoding="utf-8")
    return paths
