"""Hand-rolled SVG learning curves: per-episode mean with a +/-1 std band.

CSV is the canonical artifact; this renderer keeps plotting dependency-free.
"""
from __future__ import annotations

import csv
import sys

import numpy as np

from .errors import UsageError

WIDTH, HEIGHT = 720, 420
MARGIN = 50


def read_metric_column(path: str, column: str = "return_env") -> list[float]:
    with open(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise UsageError(f"{path} has no column {column!r}")
        return [float(row[column]) for row in reader]


def align_series(series: list[list[float]]) -> np.ndarray:
    """Stack runs row-wise, truncating to the shortest with a warning."""
    if not series:
        raise UsageError("no metric series to plot")
    shortest = min(len(s) for s in series)
    if any(len(s) != shortest for s in series):
        print(f"warning: episode counts differ; truncating to {shortest}",
              file=sys.stderr)
    return np.array([s[:shortest] for s in series], dtype=np.float64)


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return out_lo + (np.asarray(values) - lo) * (out_hi - out_lo) / span


def learning_curve_svg(series: list[list[float]], title: str = "",
                       y_label: str = "return") -> str:
    data = align_series(series)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    episodes = np.arange(1, data.shape[1] + 1)
    y_min = float((mean - std).min())
    y_max = float((mean + std).max())
    if y_max == y_min:
        y_max += 1.0

    xs = _scale(episodes, episodes[0], episodes[-1], MARGIN, WIDTH - MARGIN)
    ys_mean = _scale(mean, y_min, y_max, HEIGHT - MARGIN, MARGIN)
    ys_hi = _scale(mean + std, y_min, y_max, HEIGHT - MARGIN, MARGIN)
    ys_lo = _scale(mean - std, y_min, y_max, HEIGHT - MARGIN, MARGIN)

    def pts(x, y):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))

    band = pts(xs, ys_hi) + " " + pts(xs[::-1], ys_lo[::-1])
    line = pts(xs, ys_mean)
    ticks = []
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y_val = y_min + frac * (y_max - y_min)
        y_px = float(_scale([y_val], y_min, y_max, HEIGHT - MARGIN, MARGIN)[0])
        ticks.append(f'<text x="6" y="{y_px:.0f}" font-size="11">{y_val:.1f}</text>')
        x_val = episodes[0] + frac * (episodes[-1] - episodes[0])
        x_px = float(_scale([x_val], episodes[0], episodes[-1], MARGIN, WIDTH - MARGIN)[0])
        ticks.append(f'<text x="{x_px:.0f}" y="{HEIGHT - 28}" font-size="11">'
                     f'{x_val:.0f}</text>')
    return f"""<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-size="15">{title}</text>
<text x="16" y="{HEIGHT // 2}" font-size="12" transform="rotate(-90 16 {HEIGHT // 2})">{y_label}</text>
<text x="{WIDTH // 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">episode</text>
<polygon points="{band}" fill="#4a90d9" opacity="0.25"/>
<polyline points="{line}" fill="none" stroke="#1f5fa8" stroke-width="1.6"/>
{chr(10).join(ticks)}
</svg>
"""


def plot_metrics_files(paths: list[str], out_path: str,
                       column: str = "return_env", title: str = "") -> np.ndarray:
    series = [read_metric_column(p, column) for p in paths]
    svg = learning_curve_svg(series, title=title or column, y_label=column)
    with open(out_path, "w") as fh:
        fh.write(svg)
    return align_series(series)
