"""Byte-stable SVG figures: reward vs distance, attempts vs steps left, success density along x.

Output is plain hand-assembled SVG with fixed-precision coordinates, so the
same tables always render to the same bytes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregate import Table, Tables

WIDTH, HEIGHT = 480, 360
MARGIN = (56, 20, 24, 44)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
STRATEGY_COLOURS = {"grab": "#1f77b4", "punch": "#d62728", "none": "#7f7f7f"}


def _f(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def _esc(text: str) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


@dataclass
class Axes:
    xlim: tuple
    ylim: tuple

    def px(self, x) -> float:
        l, r, _, _ = MARGIN
        x0, x1 = self.xlim
        return l + (float(x) - x0) / (x1 - x0) * (WIDTH - l - r)

    def py(self, y) -> float:
        _, _, t, b = MARGIN
        y0, y1 = self.ylim
        return HEIGHT - b - (float(y) - y0) / (y1 - y0) * (HEIGHT - t - b)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _limits(values, default: tuple, pad: float = 0.05) -> tuple:
    v = [float(x) for x in values]
    if not v:
        return default
    lo, hi = min(v), max(v)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def _frame(ax: Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    l, r, t, b = MARGIN
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="10">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="14" text-anchor="middle" font-size="12">{_esc(title)}</text>',
        f'<line x1="{l}" y1="{HEIGHT - b}" x2="{WIDTH - r}" y2="{HEIGHT - b}" stroke="black"/>',
        f'<line x1="{l}" y1="{t}" x2="{l}" y2="{HEIGHT - b}" stroke="black"/>',
    ]
    for x in _ticks(*ax.xlim):
        X = _f(ax.px(x))
        out.append(f'<line x1="{X}" y1="{HEIGHT - b}" x2="{X}" y2="{HEIGHT - b + 4}" stroke="black"/>')
        out.append(f'<text x="{X}" y="{HEIGHT - b + 15}" text-anchor="middle">{x:.3g}</text>')
    for y in _ticks(*ax.ylim):
        Y = _f(ax.py(y))
        out.append(f'<line x1="{l - 4}" y1="{Y}" x2="{l}" y2="{Y}" stroke="black"/>')
        out.append(f'<text x="{l - 6}" y="{Y}" text-anchor="end" dominant-baseline="middle">{y:.3g}</text>')
    out.append(f'<text x="{(l + WIDTH - r) // 2}" y="{HEIGHT - 6}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="12" y="{(t + HEIGHT - b) // 2}" text-anchor="middle" '
               f'transform="rotate(-90 12 {(t + HEIGHT - b) // 2})">{_esc(ylabel)}</text>')
    return out


def _legend(entries: list[tuple[str, str]]) -> list[str]:
    out = []
    for i, (label, colour) in enumerate(entries):
        y = MARGIN[2] + 8 + 14 * i
        x = WIDTH - MARGIN[1] - 90
        out.append(f'<rect x="{x}" y="{y - 5}" width="10" height="10" fill="{colour}"/>')
        out.append(f'<text x="{x + 14}" y="{y}" dominant-baseline="middle">{_esc(label)}</text>')
    return out


def reward_vs_distance_svg(table: Table) -> str:
    d, rwd, kinds = table.column("target_distance"), table.column("cumulative_reward"), table.column("strategy")
    ax = Axes(_limits(d, (0.0, 0.6)), (-60.0, 0.0))
    out = _frame(ax, "Successful episodes: reward vs target distance", "target distance (m)", "episode reward")
    for x, y, k in zip(d, rwd, kinds):
        out.append(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="2.5" '
                   f'fill="{STRATEGY_COLOURS.get(k, "#000000")}" fill-opacity="0.7"/>')
    present = [k for k in ("grab", "punch", "none") if k in set(kinds)]
    out += _legend([(k, STRATEGY_COLOURS[k]) for k in present])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def attempts_svg(table: Table) -> str:
    a, steps, n = table.column("attempts"), table.column("mean_steps_remaining"), table.column("episodes")
    ax = Axes(_limits(steps, (0.0, 60.0)), _limits(a, (0.0, 5.0)))
    out = _frame(ax, "Attempts per episode vs steps left at success", "mean steps remaining", "attempts")
    total = max(sum(n), 1)
    for x, y, k in zip(steps, a, n):
        r = 2.0 + 10.0 * (k / total) ** 0.5
        out.append(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="{_f(r)}" fill="#1f77b4" fill-opacity="0.6"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def density_svg(tables: Tables, points: int = 121) -> str:
    curves = []
    for env in sorted(tables.densities):
        kde = tables.densities[env]
        xs = np.linspace(kde.lo, kde.hi, points)
        curves.append((env, xs, kde(xs)))
    xlim = (min(c[1][0] for c in curves), max(c[1][-1] for c in curves)) if curves else (0.0, 1.0)
    ymax = max((float(c[2].max()) for c in curves), default=0.0)
    ax = Axes(xlim, (0.0, ymax * 1.1 if ymax > 0 else 1.0))
    out = _frame(ax, "Success density along x", "target x (m)", "density (1/m)")
    legend = []
    for i, (env, xs, ys) in enumerate(curves):
        colour = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_f(ax.px(x))},{_f(ax.py(y))}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        legend.append((env, colour))
    out += _legend(legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_plots(tables: Tables, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    figures = {
        "reward_vs_distance.svg": reward_vs_distance_svg(tables.reward_vs_distance),
        "attempts.svg": attempts_svg(tables.attempts_histogram),
        "success_density_x.svg": density_svg(tables),
    }
    paths = []
    for name, text in figures.items():
        p = out / name
        with open(p, "w", newline="\n") as fh:
            fh.write(text)
        paths.append(p)
    return paths
