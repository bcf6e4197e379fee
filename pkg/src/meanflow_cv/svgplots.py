"""Tiny dependency-free SVG renderer for run artifacts.

CSV files are the canonical outputs everywhere in this package; the SVG side
is a convenience so sweeps and field maps can be eyeballed without plotting
libraries. Only what the CLI needs: heatmap panels, line plots, bar charts
with error whiskers, and scatter panels.
"""

from __future__ import annotations

import numpy as np

# coarse viridis anchors, linearly interpolated
_VIRIDIS = np.array([
    (68, 1, 84), (72, 40, 120), (62, 74, 137), (49, 104, 142),
    (38, 130, 142), (31, 158, 137), (53, 183, 121), (109, 205, 89),
    (180, 222, 44), (253, 231, 37),
], dtype=float)


def _color(value):
    """Map value in [0, 1] to a viridis-ish rgb() string."""
    v = float(np.clip(value, 0.0, 1.0)) * (len(_VIRIDIS) - 1)
    i = min(int(v), len(_VIRIDIS) - 2)
    frac = v - i
    rgb = _VIRIDIS[i] * (1 - frac) + _VIRIDIS[i + 1] * frac
    return "rgb({:d},{:d},{:d})".format(*(int(round(c)) for c in rgb))


def _header(width, height):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">'
            f'<rect width="{width}" height="{height}" fill="white"/>')


def _text(x, y, s, size=11, anchor="middle"):
    return (f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}">{s}</text>')


def heatmap_panels(panels, title="", cell_px=None, panel_size=240) -> str:
    """Render [(label, 2-D array)] side by side with a shared color scale."""
    arrays = [np.asarray(a, dtype=float) for _, a in panels]
    lo = min(a.min() for a in arrays)
    hi = max(a.max() for a in arrays)
    span = hi - lo if hi > lo else 1.0
    pad, gap, top = 20, 18, 36
    width = pad * 2 + len(panels) * panel_size + (len(panels) - 1) * gap
    height = top + panel_size + 40
    parts = [_header(width, height)]
    if title:
        parts.append(_text(width / 2, 18, title, size=13))
    for p, (label, a) in enumerate(panels):
        ox = pad + p * (panel_size + gap)
        ny, nx = a.shape
        cw, ch = panel_size / nx, panel_size / ny
        for iy in range(ny):
            for ix in range(nx):
                c = _color((a[iy, ix] - lo) / span)
                # row 0 at the bottom so the panel reads like an (x, y) plane
                parts.append(
                    f'<rect x="{ox + ix * cw:.2f}" '
                    f'y="{top + (ny - 1 - iy) * ch:.2f}" '
                    f'width="{cw + 0.5:.2f}" height="{ch + 0.5:.2f}" fill="{c}"/>'
                )
        parts.append(_text(ox + panel_size / 2, top + panel_size + 16, label))
    parts.append(_text(pad, height - 8, f"min={lo:.3g}", anchor="start"))
    parts.append(_text(width - pad, height - 8, f"max={hi:.3g}", anchor="end"))
    parts.append("</svg>")
    return "".join(parts)


def _axes(x0, y0, w, h, xlo, xhi, ylo, yhi, xlabel, ylabel):
    parts = [
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" '
        f'stroke="black" stroke-width="1"/>'
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = xlo + frac * (xhi - xlo)
        yv = ylo + frac * (yhi - ylo)
        parts.append(_text(x0 + frac * w, y0 + h + 14, f"{xv:.3g}", size=9))
        parts.append(_text(x0 - 6, y0 + (1 - frac) * h + 3, f"{yv:.3g}", size=9,
                           anchor="end"))
    parts.append(_text(x0 + w / 2, y0 + h + 28, xlabel, size=10))
    parts.append(_text(12, y0 + h / 2, ylabel, size=10))
    return parts


def line_plot(series, title="", xlabel="", ylabel="", width=480, height=320) -> str:
    """Render [(label, xs, ys)] as polylines with shared axes."""
    allx = np.concatenate([np.asarray(xs, dtype=float) for _, xs, _ in series])
    ally = np.concatenate([np.asarray(ys, dtype=float) for _, _, ys in series])
    ally = ally[np.isfinite(ally)]
    xlo, xhi = allx.min(), allx.max()
    ylo, yhi = ally.min(), ally.max()
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    m, top = 56, 30
    pw, ph = width - m - 16, height - top - 44
    parts = [_header(width, height), _text(width / 2, 18, title, size=13)]
    parts += _axes(m, top, pw, ph, xlo, xhi, ylo, yhi, xlabel, ylabel)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    for i, (label, xs, ys) in enumerate(series):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        keep = np.isfinite(ys)
        px = m + (xs[keep] - xlo) / (xhi - xlo) * pw
        py = top + (1 - (ys[keep] - ylo) / (yhi - ylo)) * ph
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))
        col = colors[i % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{col}" '
                     f'stroke-width="1.5"/>')
        parts.append(_text(m + pw - 4, top + 12 + 12 * i, label, size=10, anchor="end"))
        parts.append(f'<rect x="{m + pw - 70}" y="{top + 5 + 12 * i}" width="10" '
                     f'height="3" fill="{col}"/>')
    parts.append("</svg>")
    return "".join(parts)


def bar_chart(labels, values, errors=None, title="", ylabel="",
              width=480, height=320) -> str:
    """Vertical bars with optional symmetric error whiskers."""
    values = np.asarray(values, dtype=float)
    errors = np.zeros_like(values) if errors is None else np.asarray(errors, dtype=float)
    ylo = min(0.0, (values - errors).min())
    yhi = (values + errors).max()
    if yhi == ylo:
        yhi = ylo + 1.0
    m, top = 56, 30
    pw, ph = width - m - 16, height - top - 44
    parts = [_header(width, height), _text(width / 2, 18, title, size=13)]
    parts += _axes(m, top, pw, ph, -0.5, len(values) - 0.5, ylo, yhi, "", ylabel)

    def ypix(v):
        return top + (1 - (v - ylo) / (yhi - ylo)) * ph

    bw = pw / len(values) * 0.7
    for i, (lab, v, e) in enumerate(zip(labels, values, errors)):
        xc = m + (i + 0.5) / len(values) * pw
        y1, y0 = ypix(max(v, 0.0)), ypix(min(v, 0.0))
        parts.append(f'<rect x="{xc - bw / 2:.1f}" y="{y1:.1f}" width="{bw:.1f}" '
                     f'height="{max(y0 - y1, 0.5):.1f}" fill="#4878a8"/>')
        if e > 0:
            parts.append(f'<line x1="{xc:.1f}" y1="{ypix(v - e):.1f}" x2="{xc:.1f}" '
                         f'y2="{ypix(v + e):.1f}" stroke="black" stroke-width="1"/>')
        parts.append(_text(xc, top + ph + 14, str(lab), size=9))
    parts.append("</svg>")
    return "".join(parts)


def scatter_panels(panels, title="", panel_size=240, max_points=4000) -> str:
    """Render [(label, (n, 2) array)] point clouds side by side, shared limits."""
    arrays = [np.asarray(a, dtype=float)[:max_points] for _, a in panels]
    allp = np.concatenate(arrays, axis=0)
    lo, hi = allp.min(), allp.max()
    span = hi - lo if hi > lo else 1.0
    pad, gap, top = 20, 18, 36
    width = pad * 2 + len(panels) * panel_size + (len(panels) - 1) * gap
    height = top + panel_size + 40
    parts = [_header(width, height)]
    if title:
        parts.append(_text(width / 2, 18, title, size=13))
    for p, ((label, _), a) in enumerate(zip(panels, arrays)):
        ox = pad + p * (panel_size + gap)
        parts.append(f'<rect x="{ox}" y="{top}" width="{panel_size}" '
                     f'height="{panel_size}" fill="none" stroke="#888"/>')
        px = ox + (a[:, 0] - lo) / span * panel_size
        py = top + (1 - (a[:, 1] - lo) / span) * panel_size
        for xi, yi in zip(px, py):
            parts.append(f'<circle cx="{xi:.1f}" cy="{yi:.1f}" r="1" '
                         f'fill="#1f77b4" fill-opacity="0.5"/>')
        parts.append(_text(ox + panel_size / 2, top + panel_size + 16, label))
    parts.append("</svg>")
    return "".join(parts)
