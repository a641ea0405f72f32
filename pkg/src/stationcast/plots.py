"""Minimal SVG line charts: forecast-vs-truth panels and loss curves.

Hand-rolled SVG so artifacts stay dependency-free and structurally
diffable; coordinates are written with fixed precision and no timestamps.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")

_W, _H = 720, 360
_MARGIN = 50


def _scale(vals: np.ndarray, lo: float, hi: float, out_lo: float, out_hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return out_lo + (vals - lo) * (out_hi - out_lo) / span


def _polyline(x: np.ndarray, y: np.ndarray, color: str) -> str:
    pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in zip(x, y))
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{pts}"/>')


def render_line_chart(series: Sequence[tuple[str, np.ndarray, np.ndarray]],
                      title: str, path, x_label: str = "", y_label: str = "") -> None:
    """Write one SVG chart; ``series`` is (name, x, y) triples."""
    xs = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_W - _MARGIN}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
    ]
    for k, (name, x, y) in enumerate(series):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        px = _scale(x, x_lo, x_hi, _MARGIN, _W - _MARGIN)
        py = _scale(y, y_lo, y_hi, _H - _MARGIN, _MARGIN)
        color = _COLORS[k % len(_COLORS)]
        parts.append(_polyline(px, py, color))
        parts.append(f'<text x="{_W - _MARGIN + 4}" y="{_MARGIN + 16 * k}" '
                     f'font-family="sans-serif" font-size="11" fill="{color}" '
                     f'text-anchor="end">{name}</text>')
    for label, x, y, anchor in (
            (f"{x_lo:.6g}", _MARGIN, _H - _MARGIN + 16, "middle"),
            (f"{x_hi:.6g}", _W - _MARGIN, _H - _MARGIN + 16, "middle"),
            (f"{y_lo:.6g}", _MARGIN - 6, _H - _MARGIN, "end"),
            (f"{y_hi:.6g}", _MARGIN - 6, _MARGIN + 4, "end")):
        parts.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}" '
                     f'font-family="sans-serif" font-size="10">{label}</text>')
    if x_label:
        parts.append(f'<text x="{_W / 2:.0f}" y="{_H - 10}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{x_label}</text>')
    if y_label:
        parts.append(f'<text x="14" y="{_H / 2:.0f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11" '
                     f'transform="rotate(-90 14 {_H / 2:.0f})">{y_label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def plot_loss_curve(curve_csv_path, out_path) -> None:
    """Render the trainer's loss-curve CSV (total and components vs iteration)."""
    rows = np.genfromtxt(curve_csv_path, delimiter=",", names=True)
    it = np.atleast_1d(rows["iteration"])
    series = [(name, it, np.atleast_1d(rows[name]))
              for name in ("total", "data", "pw", "smooth")]
    render_line_chart(series, "training loss", out_path,
                      x_label="iteration", y_label="loss")


def plot_forecast(times: np.ndarray, truth: np.ndarray, prediction: np.ndarray,
                  variable: str, station_id: str, out_path) -> None:
    series = [("truth", times, truth), ("prediction", times, prediction)]
    render_line_chart(series, f"{variable} at {station_id}", out_path,
                      x_label="lead hour", y_label=variable)
