"""Deterministic SVG scatter plots (true vs predicted with a least-squares
fit line). Hand-rolled so byte output depends only on the report content."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .evaluate import EvalReport, pearson_r

W, H = 480, 420
MARGIN = 52
PLOT_W = W - 2 * MARGIN
PLOT_H = H - 2 * MARGIN


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def emit_scatter(report: EvalReport, path: str) -> None:
    """True-vs-predicted scatter of the per-district raw values, with the
    best linear fit (predicted ~ true) and R^2_adj / R / MAE annotations."""
    x = np.asarray(report.y_true_raw, dtype=float)
    y = np.asarray(report.y_pred_raw, dtype=float)
    if len(x) < 2:
        raise ValidationError(f"scatter needs >= 2 prediction pairs, got {len(x)}")

    lo = min(x.min(), y.min())
    hi = max(x.max(), y.max())
    span = hi - lo if hi > lo else 1.0
    lo -= 0.05 * span
    hi += 0.05 * span

    def sx(v):
        return MARGIN + (v - lo) / (hi - lo) * PLOT_W

    def sy(v):
        return H - MARGIN - (v - lo) / (hi - lo) * PLOT_H

    # Least-squares line predicted = a + b * true.
    xc = x - x.mean()
    b = float(xc @ (y - y.mean())) / float(xc @ xc) if float(xc @ xc) > 0 else 0.0
    a = float(y.mean() - b * x.mean())

    r2a_mean, r2a_std = report.aggregate("r2_adj")
    mae_mean, mae_std = report.aggregate("mae")
    r = pearson_r(x, y)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{PLOT_W}" height="{PLOT_H}" '
        f'fill="none" stroke="#222" stroke-width="1"/>',
    ]
    # Axis ticks: 5 evenly spaced values.
    for i in range(5):
        v = lo + (hi - lo) * i / 4
        px = sx(v)
        py = sy(v)
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{H - MARGIN}" x2="{_fmt(px)}" '
            f'y2="{H - MARGIN + 4}" stroke="#222"/>'
        )
        parts.append(
            f'<text x="{_fmt(px)}" y="{H - MARGIN + 16}" font-size="9" '
            f'text-anchor="middle" font-family="sans-serif">{_fmt(v)}</text>'
        )
        parts.append(
            f'<line x1="{MARGIN - 4}" y1="{_fmt(py)}" x2="{MARGIN}" y2="{_fmt(py)}" '
            f'stroke="#222"/>'
        )
        parts.append(
            f'<text x="{MARGIN - 6}" y="{_fmt(py + 3)}" font-size="9" '
            f'text-anchor="end" font-family="sans-serif">{_fmt(v)}</text>'
        )
    parts.append(
        f'<text x="{W // 2}" y="{H - 12}" font-size="11" text-anchor="middle" '
        f'font-family="sans-serif">true {report.target}</text>'
    )
    parts.append(
        f'<text x="14" y="{H // 2}" font-size="11" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 14 {H // 2})">predicted</text>'
    )
    for xi, yi in zip(x, y):
        parts.append(
            f'<circle cx="{_fmt(sx(xi))}" cy="{_fmt(sy(yi))}" r="3" '
            f'fill="#1f77b4" fill-opacity="0.6"/>'
        )
    parts.append(
        f'<line x1="{_fmt(sx(lo))}" y1="{_fmt(sy(a + b * lo))}" '
        f'x2="{_fmt(sx(hi))}" y2="{_fmt(sy(a + b * hi))}" '
        f'stroke="#2ca02c" stroke-width="1.5"/>'
    )
    def _stat(mean, std):
        if not np.isfinite(mean):
            return "n/a"
        return f"{_fmt(mean)} ± {_fmt(std)}"

    label = (
        f"R2_adj = {_stat(r2a_mean, r2a_std)}   "
        f"R = {_fmt(r)}   MAE = {_stat(mae_mean, mae_std)}"
    )
    parts.append(
        f'<text x="{MARGIN + 4}" y="{MARGIN - 8}" font-size="10" '
        f'font-family="sans-serif">{label}</text>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def fit_line(report: EvalReport) -> tuple[float, float]:
    """(intercept, slope) of the scatter's least-squares line."""
    x = np.asarray(report.y_true_raw, dtype=float)
    y = np.asarray(report.y_pred_raw, dtype=float)
    xc = x - x.mean()
    b = float(xc @ (y - y.mean())) / float(xc @ xc) if float(xc @ xc) > 0 else 0.0
    return float(y.mean() - b * x.mean()), b
