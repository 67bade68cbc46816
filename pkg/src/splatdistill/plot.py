"""Minimal raster line plots, enough to eyeball schedule curves without matplotlib."""

from __future__ import annotations

import numpy as np

AXIS = (0.0, 0.0, 0.0)
GRID = (0.85, 0.85, 0.85)


def _segment(img, x0, y0, x1, y1, color):
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.round(np.linspace(x0, x1, n)).astype(int)
    ys = np.round(np.linspace(y0, y1, n)).astype(int)
    h, w = img.shape[:2]
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    img[ys[ok], xs[ok]] = color


def line_plot(x, y, width: int = 320, height: int = 200, color=(0.8, 0.1, 0.1), margin: int = 12,
              vlines=(), step: bool = False) -> np.ndarray:
    """Polyline of ``y`` against ``x`` on a white canvas with axes.

    ``vlines`` are x positions drawn as light guides (phase boundaries, say).
    ``step=True`` joins points with horizontal-then-vertical segments.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    img = np.ones((height, width, 3))
    x_lo, x_hi = float(x.min()), float(x.max())
    y_lo, y_hi = min(0.0, float(y.min())), float(y.max())
    sx = (width - 2 * margin) / max(x_hi - x_lo, 1e-12)
    sy = (height - 2 * margin) / max(y_hi - y_lo, 1e-12)

    def px(v):
        return margin + (v - x_lo) * sx

    def py(v):
        return height - 1 - margin - (v - y_lo) * sy

    for v in vlines:
        _segment(img, px(v), margin, px(v), height - 1 - margin, GRID)
    _segment(img, margin, py(y_lo), width - 1 - margin, py(y_lo), AXIS)
    _segment(img, margin, margin, margin, height - 1 - margin, AXIS)
    for k in range(len(x) - 1):
        if step:
            _segment(img, px(x[k]), py(y[k]), px(x[k + 1]), py(y[k]), color)
            _segment(img, px(x[k + 1]), py(y[k]), px(x[k + 1]), py(y[k + 1]), color)
        else:
            _segment(img, px(x[k]), py(y[k]), px(x[k + 1]), py(y[k + 1]), color)
    return img


def side_by_side(*panels: np.ndarray, gap: int = 4) -> np.ndarray:
    h = max(p.shape[0] for p in panels)
    parts = []
    for k, p in enumerate(panels):
        pad = np.ones((h, p.shape[1], 3))
        pad[: p.shape[0]] = p
        parts.append(pad)
        if k + 1 < len(panels):
            parts.append(np.ones((h, gap, 3)))
    return np.concatenate(parts, axis=1)
