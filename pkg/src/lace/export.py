"""Self-contained SVG renderings: flow-map arrow plots and FDE heatmaps.

Plain text output, no plotting dependency, so files diff cleanly in
tests. Color scale: a fixed 8-stop viridis-like ramp, linearly
interpolated and stretched over the rendered value range; the range is
printed in the legend.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

from .model import LaceModel, write_atomic_text

# viridis anchors, dark-to-bright
_RAMP = (
    (68, 1, 84),
    (71, 44, 122),
    (59, 81, 139),
    (44, 113, 142),
    (33, 144, 141),
    (39, 173, 129),
    (92, 200, 99),
    (253, 231, 37),
)


def ramp_color(u: float) -> str:
    """Hex color for u in [0, 1] on the documented ramp."""
    u = min(max(u, 0.0), 1.0)
    pos = u * (len(_RAMP) - 1)
    i = min(int(pos), len(_RAMP) - 2)
    frac = pos - i
    r, g, b = (
        round(_RAMP[i][c] + frac * (_RAMP[i + 1][c] - _RAMP[i][c])) for c in range(3)
    )
    return f"#{r:02x}{g:02x}{b:02x}"


class _Canvas:
    """Maps world coordinates into a padded SVG viewport (y axis up)."""

    def __init__(self, bounds: tuple[float, float, float, float], size: int = 640, pad: int = 40):
        self.xmin, self.xmax, self.ymin, self.ymax = bounds
        span = max(self.xmax - self.xmin, self.ymax - self.ymin, 1e-9)
        self.scale = (size - 2 * pad) / span
        self.pad = pad
        self.width = int(2 * pad + (self.xmax - self.xmin) * self.scale)
        self.height = int(2 * pad + (self.ymax - self.ymin) * self.scale)

    def px(self, x: float) -> float:
        return self.pad + (x - self.xmin) * self.scale

    def py(self, y: float) -> float:
        return self.height - self.pad - (y - self.ymin) * self.scale


def _svg_document(canvas: _Canvas, body: list[str], desc: str) -> str:
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{canvas.width}" '
        f'height="{canvas.height}" viewBox="0 0 {canvas.width} {canvas.height}">',
        f"<desc>{_escape(desc)}</desc>",
        f'<rect x="0" y="0" width="{canvas.width}" height="{canvas.height}" fill="white"/>',
        *body,
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _legend(canvas: _Canvas, vmin: float, vmax: float, label: str) -> list[str]:
    x0 = canvas.width - canvas.pad - 12
    y0 = canvas.pad
    h = canvas.height - 2 * canvas.pad
    stops = "".join(
        f'<stop offset="{i / (len(_RAMP) - 1):.4f}" stop-color="{ramp_color(i / (len(_RAMP) - 1))}"/>'
        for i in range(len(_RAMP))
    )
    return [
        f'<defs><linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0">{stops}</linearGradient></defs>',
        f'<rect x="{x0}" y="{y0}" width="12" height="{h}" fill="url(#ramp)" stroke="black" stroke-width="0.5"/>',
        f'<text x="{x0 - 4}" y="{y0 + 10}" text-anchor="end" font-size="11">{vmax:.3g}</text>',
        f'<text x="{x0 - 4}" y="{y0 + h}" text-anchor="end" font-size="11">{vmin:.3g}</text>',
        f'<text x="{x0 + 6}" y="{y0 - 8}" text-anchor="end" font-size="11">{_escape(label)}</text>',
    ]


def arrow_map_svg(model: LaceModel, config_note: str = "") -> str:
    """One arrow per cluster along the laminar component's best direction.

    The arrow sits at the cluster centroid, points along the argmax bin
    of the speed-marginalized laminar distribution and is colored by
    that bin's probability.
    """
    if model.n_clusters == 0:
        raise ValueError("model has no clusters")
    cents = model.centroids()
    bounds = (
        float(cents[:, 0].min()) - 1.0,
        float(cents[:, 0].max()) + 1.0,
        float(cents[:, 1].min()) - 1.0,
        float(cents[:, 1].max()) + 1.0,
    )
    canvas = _Canvas(bounds)
    area = (bounds[1] - bounds[0]) * (bounds[3] - bounds[2])
    arrow_len = 0.8 * math.sqrt(area / max(model.n_clusters, 1))

    probs = []
    dirs = []
    for c in model.clusters:
        marginal = c.gamma_l.direction_marginal()
        b = int(marginal.argmax())
        probs.append(float(marginal[b]))
        dirs.append((b + 0.5) * model.geometry.direction_bin_width)
    vmin, vmax = min(probs), max(probs)
    span = (vmax - vmin) or 1.0

    body = []
    for c, p, ang in zip(model.clusters, probs, dirs):
        color = ramp_color((p - vmin) / span)
        x0, y0 = c.centroid
        x1 = x0 + arrow_len * math.cos(ang)
        y1 = y0 + arrow_len * math.sin(ang)
        hx = x1 - 0.35 * arrow_len * math.cos(ang)
        hy = y1 - 0.35 * arrow_len * math.sin(ang)
        ox = 0.15 * arrow_len * math.cos(ang + math.pi / 2)
        oy = 0.15 * arrow_len * math.sin(ang + math.pi / 2)
        body.append(
            f'<line x1="{canvas.px(x0):.2f}" y1="{canvas.py(y0):.2f}" '
            f'x2="{canvas.px(x1):.2f}" y2="{canvas.py(y1):.2f}" '
            f'stroke="{color}" stroke-width="1.6"/>'
        )
        body.append(
            f'<polygon points="{canvas.px(x1):.2f},{canvas.py(y1):.2f} '
            f'{canvas.px(hx + ox):.2f},{canvas.py(hy + oy):.2f} '
            f'{canvas.px(hx - ox):.2f},{canvas.py(hy - oy):.2f}" fill="{color}"/>'
        )
    body.extend(_legend(canvas, vmin, vmax, "peak direction probability"))
    desc = f"flow-map arrows; {model.n_clusters} clusters; {config_note}"
    return _svg_document(canvas, body, desc)


def heatmap_svg(
    rows: Sequence[dict],
    bounds: Optional[tuple[float, float, float, float]] = None,
    config_note: str = "",
) -> str:
    """Filled cells colored by mean FDE; cells without data stay absent.

    ``rows`` follow HeatmapGrid.to_rows(): xmin/ymin/xmax/ymax rectangle
    plus mean_fde and count per cell.
    """
    if not rows:
        raise ValueError("no heatmap cells to render")
    if bounds is None:
        bounds = (
            min(r["xmin"] for r in rows),
            max(r["xmax"] for r in rows),
            min(r["ymin"] for r in rows),
            max(r["ymax"] for r in rows),
        )
    canvas = _Canvas(bounds)
    values = [float(r["mean_fde"]) for r in rows]
    vmin, vmax = min(values), max(values)
    span = (vmax - vmin) or 1.0
    body = []
    for r in rows:
        color = ramp_color((float(r["mean_fde"]) - vmin) / span)
        x = canvas.px(float(r["xmin"]))
        y = canvas.py(float(r["ymax"]))
        w = (float(r["xmax"]) - float(r["xmin"])) * canvas.scale
        h = (float(r["ymax"]) - float(r["ymin"])) * canvas.scale
        body.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="{color}"/>'
        )
    body.extend(_legend(canvas, vmin, vmax, "mean FDE [m]"))
    desc = f"FDE heatmap; {len(rows)} cells; {config_note}"
    return _svg_document(canvas, body, desc)


def save_svg(path: str, svg_text: str) -> None:
    write_atomic_text(path, svg_text)
