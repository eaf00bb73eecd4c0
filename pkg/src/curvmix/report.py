"""CSV and hand-written SVG output for gate/curvature consistency and
hyperparameter sweeps.

The CSV files are canonical; every SVG is rendered from the parsed CSV
content only, so identical CSVs give byte-identical SVGs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import replace
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .curvature import CurvatureMap
from .graph import Graph
from .trainer import TrainConfig, evaluate, train

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=60, right=60, top=40, bottom=50)
GATE_COLORS = {"wE": "#1b9e77", "wH": "#d95f02", "wS": "#7570b3"}
GATE_LABELS = {"wE": "mean w_E", "wH": "mean w_H", "wS": "mean w_S"}
SWEEP_PARAMS = ("theta", "K")


def _num(x: float) -> str:
    return f"{x:.2f}"


def parse_consistency_csv(text: str) -> list[dict]:
    """The per-bin rows of a consistency CSV (correlation footer skipped)."""
    rows = []
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header[:3] != ["bin_low", "bin_high", "count"]:
        raise ValueError("not a consistency CSV")
    for r in reader:
        if not r:
            break
        row = {"low": float(r[0]), "high": float(r[1]), "count": int(r[2])}
        for key, cell in zip(("wE", "wH", "wS"), r[3:6]):
            row[key] = float(cell) if cell != "" else None
        rows.append(row)
    return rows


class _Canvas:
    def __init__(self, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        ]
        self.x0 = MARGIN["left"]
        self.x1 = WIDTH - MARGIN["right"]
        self.y0 = HEIGHT - MARGIN["bottom"]
        self.y1 = MARGIN["top"]

    def add(self, s: str) -> None:
        self.parts.append(s)

    def frame(self, xlabel: str, ylabel: str, y2label: Optional[str] = None) -> None:
        self.add(
            f'<rect x="{self.x0}" y="{self.y1}" width="{self.x1 - self.x0}" height="{self.y0 - self.y1}" '
            'fill="none" stroke="black"/>'
        )
        self.add(f'<text x="{(self.x0 + self.x1) / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
        ym = (self.y0 + self.y1) / 2
        self.add(f'<text x="16" y="{ym:.2f}" text-anchor="middle" transform="rotate(-90 16 {ym:.2f})">{escape(ylabel)}</text>')
        if y2label:
            xr = WIDTH - 14
            self.add(f'<text x="{xr}" y="{ym:.2f}" text-anchor="middle" transform="rotate(90 {xr} {ym:.2f})">{escape(y2label)}</text>')

    def xtick(self, x: float, label: str) -> None:
        self.add(f'<line x1="{_num(x)}" y1="{self.y0}" x2="{_num(x)}" y2="{self.y0 + 4}" stroke="black"/>')
        self.add(f'<text x="{_num(x)}" y="{self.y0 + 16}" text-anchor="middle">{escape(label)}</text>')

    def ytick(self, y: float, label: str, right: bool = False) -> None:
        x = self.x1 if right else self.x0
        dx = 4 if right else -4
        anchor = "start" if right else "end"
        self.add(f'<line x1="{x}" y1="{_num(y)}" x2="{x + dx}" y2="{_num(y)}" stroke="black"/>')
        self.add(f'<text x="{x + 2 * dx}" y="{_num(y + 4)}" text-anchor="{anchor}">{escape(label)}</text>')

    def polyline(self, pts: Sequence[tuple], color: str, markers: bool = True) -> None:
        if not pts:
            return
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in pts)
        self.add(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        if markers:
            for x, y in pts:
                self.add(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="3" fill="{color}"/>')

    def legend(self, entries: Sequence[tuple]) -> None:
        for i, (label, color) in enumerate(entries):
            y = self.y1 + 14 + 16 * i
            self.add(f'<line x1="{self.x0 + 10}" y1="{y}" x2="{self.x0 + 30}" y2="{y}" stroke="{color}" stroke-width="2"/>')
            self.add(f'<text x="{self.x0 + 36}" y="{y + 4}">{escape(label)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def consistency_svg(bins: Sequence[dict], title: str = "Node curvature and mean routing weights") -> str:
    """Histogram of node curvature (bars, left axis) overlaid with the mean
    gate weight per bin (lines, right axis in [0, 1])."""
    if not bins:
        raise ValueError("no bins to plot")
    cv = _Canvas(title)
    lo, hi = bins[0]["low"], bins[-1]["high"]
    span = hi - lo if hi > lo else 1.0
    top = max(b["count"] for b in bins) or 1

    def sx(k):
        return cv.x0 + (k - lo) / span * (cv.x1 - cv.x0)

    def sy_count(c):
        return cv.y0 - c / top * (cv.y0 - cv.y1)

    def sy_w(w):
        return cv.y0 - w * (cv.y0 - cv.y1)

    for b in bins:
        x, x2 = sx(b["low"]), sx(b["high"])
        y = sy_count(b["count"])
        cv.add(
            f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(max(x2 - x - 1, 0.5))}" '
            f'height="{_num(cv.y0 - y)}" fill="#cccccc"/>'
        )
    for key, color in GATE_COLORS.items():
        pts = [
            (sx(0.5 * (b["low"] + b["high"])), sy_w(b[key]))
            for b in bins
            if b["count"] > 0 and b[key] is not None
        ]
        cv.polyline(pts, color)
    cv.frame("node curvature", "node count", "mean gate weight")
    for i in range(5):
        k = lo + span * i / 4
        cv.xtick(sx(k), f"{k:.2f}")
    for i in range(5):
        c = top * i / 4
        cv.ytick(sy_count(c), f"{c:.0f}")
        cv.ytick(sy_w(i / 4), f"{i / 4:.2f}", right=True)
    cv.legend([(GATE_LABELS[k], c) for k, c in GATE_COLORS.items()] + [("node count", "#cccccc")])
    return cv.render()


# ---------------------------------------------------------------------------
# Sweeps


def sweep(g: Graph, cfg: TrainConfig, curvature: CurvatureMap, param: str, values: Sequence[float]) -> list[tuple]:
    """Test accuracy of one training run per value of ``param``, same seed."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"sweep parameter must be one of {SWEEP_PARAMS}")
    out = []
    for v in values:
        run = replace(cfg, **{param: int(v) if param == "K" else float(v)})
        state = train(g, run, curvature)
        out.append((v, evaluate(state, g, g.masks.test).accuracy))
    return out


def sweep_csv(param: str, points: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([param, "accuracy"])
    for v, acc in points:
        w.writerow([repr(v), repr(float(acc))])
    return buf.getvalue()


def parse_sweep_csv(text: str) -> tuple[str, list[tuple]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if len(header) != 2 or header[1] != "accuracy":
        raise ValueError("not a sweep CSV")
    return header[0], [(float(r[0]), float(r[1])) for r in reader if r]


def sweep_svg(param: str, points: Sequence[tuple], log_x: Optional[bool] = None) -> str:
    """Line chart of test accuracy against the swept value."""
    if not points:
        raise ValueError("no sweep points to plot")
    if log_x is None:
        log_x = param == "theta"
    xs = np.array([p[0] for p in points], dtype=np.float64)
    ys = np.array([p[1] for p in points], dtype=np.float64)
    tx = np.log10(xs) if log_x else xs
    lo, hi = float(tx.min()), float(tx.max())
    span = hi - lo if hi > lo else 1.0
    ylo = math.floor(min(ys.min(), 1.0) * 10) / 10
    ylo = min(ylo, 0.9)
    cv = _Canvas(f"Test accuracy versus {param}")

    def sx(t):
        return cv.x0 + 20 + (t - lo) / span * (cv.x1 - cv.x0 - 40)

    def sy(a):
        return cv.y0 - (a - ylo) / (1.0 - ylo) * (cv.y0 - cv.y1)

    cv.polyline([(sx(t), sy(a)) for t, a in zip(tx, ys)], "#1f78b4")
    cv.frame(f"{param} (log scale)" if log_x else param, "test accuracy")
    for x, t in zip(xs, tx):
        cv.xtick(sx(t), f"{x:g}")
    for i in range(5):
        a = ylo + (1.0 - ylo) * i / 4
        cv.ytick(sy(a), f"{a:.2f}")
    return cv.render()
