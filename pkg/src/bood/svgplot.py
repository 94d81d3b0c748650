"""Self-contained SVG plots: latent scatter, score histograms, sweep lines.

Hand-rolled writer so the emitted files are deterministic, dependency-free and
directly assertable (fixed palette, no fonts embedded).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]
ID_COLOR = "#1f77b4"
OOD_COLOR = "#d62728"
SELECT_COLOR = "#000000"

_W, _H = 640, 480
_MARGIN = 54


class _Frame:
    """Maps data coordinates into the pixel viewport and accumulates elements."""

    def __init__(self, xlim, ylim, title: str, xlabel: str = "", ylabel: str = ""):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.parts: list[str] = []
        self._axes(title, xlabel, ylabel)

    def px(self, x: float) -> float:
        return _MARGIN + (x - self.x0) / (self.x1 - self.x0) * (_W - 2 * _MARGIN)

    def py(self, y: float) -> float:
        return _H - _MARGIN - (y - self.y0) / (self.y1 - self.y0) * (_H - 2 * _MARGIN)

    def _axes(self, title, xlabel, ylabel):
        p = self.parts
        p.append(f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>')
        p.append(
            f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_W - 2 * _MARGIN}" '
            f'height="{_H - 2 * _MARGIN}" fill="none" stroke="#333333" stroke-width="1"/>'
        )
        if title:
            p.append(self._text(_W / 2, _MARGIN / 2, title, anchor="middle", size=14))
        if xlabel:
            p.append(self._text(_W / 2, _H - 12, xlabel, anchor="middle"))
        if ylabel:
            p.append(
                f'<text x="14" y="{_H / 2:.1f}" font-family="sans-serif" font-size="12" '
                f'text-anchor="middle" transform="rotate(-90 14 {_H / 2:.1f})">{ylabel}</text>'
            )
        for t in np.linspace(self.x0, self.x1, 5):
            x = self.px(t)
            p.append(f'<line x1="{x:.1f}" y1="{_H - _MARGIN}" x2="{x:.1f}" y2="{_H - _MARGIN + 4}" stroke="#333333"/>')
            p.append(self._text(x, _H - _MARGIN + 16, f"{t:.3g}", anchor="middle", size=10))
        for t in np.linspace(self.y0, self.y1, 5):
            y = self.py(t)
            p.append(f'<line x1="{_MARGIN - 4}" y1="{y:.1f}" x2="{_MARGIN}" y2="{y:.1f}" stroke="#333333"/>')
            p.append(self._text(_MARGIN - 6, y + 3, f"{t:.3g}", anchor="end", size=10))

    @staticmethod
    def _text(x, y, s, anchor="start", size=12) -> str:
        return (
            f'<text x="{x:.1f}" y="{y:.1f}" font-family="sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}">{s}</text>'
        )

    def circle(self, x, y, r, color, opacity=1.0):
        self.parts.append(
            f'<circle cx="{self.px(x):.2f}" cy="{self.py(y):.2f}" r="{r}" '
            f'fill="{color}" fill-opacity="{opacity}"/>'
        )

    def ring(self, x, y, r, color):
        self.parts.append(
            f'<circle cx="{self.px(x):.2f}" cy="{self.py(y):.2f}" r="{r}" '
            f'fill="none" stroke="{color}" stroke-width="1.3"/>'
        )

    def polyline(self, xs, ys, color, width=1.2, opacity=1.0):
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys))
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{opacity}"/>'
        )

    def bar(self, x_left, x_right, height_frac, color, opacity):
        x0, x1 = self.px(x_left), self.px(x_right)
        y1 = self.py(self.y0)
        y0 = self.py(self.y0 + height_frac * (self.y1 - self.y0))
        self.parts.append(
            f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" height="{y1 - y0:.2f}" '
            f'fill="{color}" fill-opacity="{opacity}"/>'
        )

    def legend(self, entries: list[tuple[str, str]]):
        for i, (label, color) in enumerate(entries):
            y = _MARGIN + 14 + 16 * i
            self.parts.append(f'<rect x="{_W - _MARGIN - 110}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
            self.parts.append(self._text(_W - _MARGIN - 96, y, label, size=11))

    def save(self, path):
        body = "\n".join(self.parts)
        svg = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">\n{body}\n</svg>\n'
        )
        Path(path).write_text(svg)


def class_color(label: int) -> str:
    return PALETTE[label % len(PALETTE)]


def plot_latent2d(
    points: np.ndarray,
    labels: np.ndarray,
    path,
    selected: np.ndarray | None = None,
    trajectories: list[np.ndarray] | None = None,
    title: str = "latent space",
) -> None:
    """Scatter of 2-D latent points colored by class, selected boundary features
    ringed in black, synthesis trajectories drawn as polylines."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ValueError("no points to plot")
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"latent2d needs (m, 2) points, got {points.shape}")
    all_x = [points[:, 0]]
    all_y = [points[:, 1]]
    if trajectories:
        for t in trajectories:
            all_x.append(t[:, 0])
            all_y.append(t[:, 1])
    xs, ys = np.concatenate(all_x), np.concatenate(all_y)
    pad_x = 0.05 * (xs.max() - xs.min() + 1e-9)
    pad_y = 0.05 * (ys.max() - ys.min() + 1e-9)
    f = _Frame((xs.min() - pad_x, xs.max() + pad_x), (ys.min() - pad_y, ys.max() + pad_y), title)
    for p, lab in zip(points, labels):
        f.circle(p[0], p[1], 2.0, class_color(int(lab)), opacity=0.55)
    if trajectories:
        for t in trajectories:
            f.polyline(t[:, 0], t[:, 1], OOD_COLOR, width=1.0, opacity=0.8)
            f.circle(t[-1, 0], t[-1, 1], 2.5, OOD_COLOR)
    if selected is not None and len(selected):
        for p in np.asarray(selected):
            f.ring(p[0], p[1], 4.0, SELECT_COLOR)
    f.save(path)


def plot_score_hist(
    id_scores: np.ndarray,
    ood_scores: np.ndarray,
    path,
    bins: int = 30,
    title: str = "detector scores",
) -> None:
    """Overlaid normalized histograms of ID and OOD scores."""
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if len(id_scores) == 0 or len(ood_scores) == 0:
        raise ValueError("empty score set")
    lo = min(id_scores.min(), ood_scores.min())
    hi = max(id_scores.max(), ood_scores.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    h_id, _ = np.histogram(id_scores, bins=edges)
    h_ood, _ = np.histogram(ood_scores, bins=edges)
    top = max(h_id.max() / len(id_scores), h_ood.max() / len(ood_scores))
    f = _Frame((lo, hi), (0.0, 1.05 * top), title, xlabel="score", ylabel="fraction")
    for i in range(bins):
        if h_id[i]:
            f.bar(edges[i], edges[i + 1], h_id[i] / len(id_scores) / (1.05 * top), ID_COLOR, 0.55)
        if h_ood[i]:
            f.bar(edges[i], edges[i + 1], h_ood[i] / len(ood_scores) / (1.05 * top), OOD_COLOR, 0.55)
    f.legend([("ID", ID_COLOR), ("OOD", OOD_COLOR)])
    f.save(path)


def plot_sweep_line(
    xs: list[float],
    series: dict[str, list[float]],
    path,
    xlabel: str,
    title: str = "sweep",
) -> None:
    """Line plot of one or more metrics over a hyperparameter sweep."""
    if not xs or not series:
        raise ValueError("empty sweep data")
    ys = np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()])
    pad = 0.05 * (ys.max() - ys.min() + 1e-9)
    f = _Frame((min(xs), max(xs)), (ys.min() - pad, ys.max() + pad), title, xlabel=xlabel)
    entries = []
    for i, (name, vals) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        f.polyline(xs, vals, color, width=1.8)
        for x, y in zip(xs, vals):
            f.circle(x, y, 3.0, color)
        entries.append((name, color))
    f.legend(entries)
    f.save(path)
