"""Deterministic SVG waveform plots (one pane per node, shared time axis)."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ._io import atomic_write
from .engine import Waveform

WIDTH = 720
PANE_H = 200
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 20, 45
MAX_POINTS = 1500
COLORS = ("#1f5fa8", "#b8331c", "#2d7d2d", "#7a3fa0")


def _decimate(t: np.ndarray, y: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # keep the min and max of each bucket so edges survive
    if t.size <= n:
        return t, y
    edges = np.linspace(0, t.size, n // 2 + 1).astype(int)
    idx = []
    for a, b in zip(edges[:-1], edges[1:]):
        seg = y[a:b]
        i, j = a + int(seg.argmin()), a + int(seg.argmax())
        idx.extend(sorted({i, j}))
    idx = np.asarray(idx)
    return t[idx], y[idx]


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    return np.linspace(lo, hi, n)


def render_svg(w: Waveform, nodes: Sequence[str]) -> str:
    if not nodes:
        raise ValueError("need at least one node to plot")
    series = [(n, w.v(n)) for n in nodes]  # KeyError on unknown nodes
    t_us = w.times * 1e6
    t_lo, t_hi = float(t_us[0]), float(t_us[-1])
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    height = len(series) * (PANE_H + MARGIN_T + MARGIN_B)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{height}" fill="white"/>']
    for k, (name, y) in enumerate(series):
        top = k * (PANE_H + MARGIN_T + MARGIN_B) + MARGIN_T
        y_lo, y_hi = min(0.0, float(y.min())), float(y.max())
        if y_hi - y_lo < 1e-3:
            y_hi = y_lo + 1e-3
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad

        def px(t):
            return MARGIN_L + (t - t_lo) / (t_hi - t_lo) * plot_w

        def py(v):
            return top + (y_hi - v) / (y_hi - y_lo) * PANE_H

        out.append(f'<rect x="{MARGIN_L}" y="{top}" width="{plot_w}" height="{PANE_H}" '
                   f'fill="none" stroke="#444"/>')
        for tv in _ticks(t_lo, t_hi):
            x = px(tv)
            out.append(f'<line x1="{x:.2f}" y1="{top + PANE_H}" x2="{x:.2f}" '
                       f'y2="{top + PANE_H + 4}" stroke="#444"/>')
            out.append(f'<text x="{x:.2f}" y="{top + PANE_H + 16}" '
                       f'text-anchor="middle">{tv:.3g}</text>')
        for vv in _ticks(y_lo + pad, y_hi - pad):
            yy = py(vv)
            out.append(f'<line x1="{MARGIN_L - 4}" y1="{yy:.2f}" x2="{MARGIN_L}" '
                       f'y2="{yy:.2f}" stroke="#444"/>')
            out.append(f'<text x="{MARGIN_L - 7}" y="{yy + 4:.2f}" '
                       f'text-anchor="end">{vv:.3g}</text>')
        out.append(f'<text x="{MARGIN_L + plot_w / 2:.2f}" y="{top + PANE_H + 34}" '
                   f'text-anchor="middle">time (µs)</text>')
        out.append(f'<text x="16" y="{top + PANE_H / 2:.2f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {top + PANE_H / 2:.2f})">V({name}) (V)</text>')
        td, yd = _decimate(t_us, y, MAX_POINTS)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(td, yd))
        out.append(f'<polyline fill="none" stroke="{COLORS[k % len(COLORS)]}" '
                   f'stroke-width="1.2" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(w: Waveform, nodes: Sequence[str], path) -> None:
    """Write the plot of ``nodes`` to ``path``; identical input gives identical bytes."""
    atomic_write(path, render_svg(w, nodes))
