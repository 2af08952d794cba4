"""Episode-level tables, x-binned success summaries and reflected Gaussian density estimates."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .episode_log import EpisodeLog
from .events import DEFAULT_THRESHOLDS, EventKind, Thresholds, classify_events, count_attempts

BIN_WIDTH = 0.01
BANDWIDTH = 0.02


class EmptyStreamError(ValueError):
    pass


@dataclass
class Table:
    columns: tuple
    rows: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)  # RFC 4180: CRLF line endings, minimal quoting
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_cell(v) for v in r])

    def column(self, name) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


@dataclass(frozen=True)
class ReflectedKDE:
    """Gaussian kernel density on [lo, hi] with boundary reflection; integrates to 1 on the interval."""
    samples: np.ndarray
    bandwidth: float
    lo: float
    hi: float

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if self.samples.size == 0:
            return np.zeros_like(x)
        s = self.samples[None, :]
        total = np.zeros_like(x)
        for centre in (s, 2 * self.lo - s, 2 * self.hi - s):
            total += np.exp(-0.5 * ((x[:, None] - centre) / self.bandwidth) ** 2).sum(axis=1)
        dens = total / (self.samples.size * self.bandwidth * math.sqrt(2 * math.pi))
        return np.where((x >= self.lo) & (x <= self.hi), dens, 0.0)

    def integral(self, a: float | None = None, b: float | None = None) -> float:
        """Exact mass on [a, b] (default: the whole support)."""
        a = self.lo if a is None else max(a, self.lo)
        b = self.hi if b is None else min(b, self.hi)
        if self.samples.size == 0 or b <= a:
            return 0.0
        cdf = np.vectorize(lambda z: 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))
        mass = 0.0
        for centre in (self.samples, 2 * self.lo - self.samples, 2 * self.hi - self.samples):
            mass += float(np.sum(cdf((b - centre) / self.bandwidth) - cdf((a - centre) / self.bandwidth)))
        return mass / self.samples.size


def target_x_range(env: str, xs: np.ndarray) -> tuple[float, float]:
    """Sampler range for a known variant, else the data range."""
    from ..simenv import ConfigError, make_config
    try:
        lo, hi = make_config(env).target_x_range
        return float(lo), float(hi)
    except ConfigError:
        if xs.size == 0:
            return 0.0, 1.0
        return float(xs.min()), float(max(xs.max(), xs.min() + BIN_WIDTH))


def _bins(lo: float, hi: float, width: float) -> np.ndarray:
    n = max(int(math.ceil(round((hi - lo) / width, 9))), 1)
    return lo + width * np.arange(n + 1)


EPISODE_COLUMNS = ("env", "seed", "episode_index", "target_x", "target_y", "target_distance",
                   "cumulative_reward", "success", "n_grab", "n_punch", "strategy", "attempts",
                   "attempts_before_success", "steps_remaining")


@dataclass
class Tables:
    episodes: Table
    reward_vs_distance: Table
    success_vs_x: Table
    attempts_histogram: Table
    summary: Table
    densities: dict  # env -> ReflectedKDE over successful target x

    def named(self) -> dict:
        return {"episodes": self.episodes, "reward_vs_distance": self.reward_vs_distance,
                "success_vs_x": self.success_vs_x, "attempts_histogram": self.attempts_histogram,
                "summary": self.summary}

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, table in self.named().items():
            p = out / f"{name}.csv"
            table.write_csv(p)
            paths.append(p)
        return paths


def episode_row(log: EpisodeLog, th: Thresholds) -> tuple:
    events = classify_events(log, th)
    att = count_attempts(log, th, events)
    start = np.asarray(log.extra.get("box_start", log.box_pos[0]), dtype=np.float64)
    dist = float(np.hypot(*(log.target[:2] - start[:2])))
    success = bool(log.reward[-1] == 0.0)
    scoring = [e for e in events if att.first_success_step is None or e.end_step <= att.first_success_step]
    strategy = scoring[-1].kind.value if (success and scoring) else "none"
    return (log.env, int(log.seed), int(log.episode_index), float(log.target[0]), float(log.target[1]), dist,
            log.cumulative_reward, int(success), sum(e.kind is EventKind.GRAB for e in events),
            sum(e.kind is EventKind.PUNCH for e in events), strategy, att.attempts,
            att.attempts_before_success, att.steps_remaining)


def aggregate(logs: Iterable[EpisodeLog], bandwidth: float = BANDWIDTH, bin_width: float = BIN_WIDTH,
              thresholds: Thresholds = DEFAULT_THRESHOLDS) -> Tables:
    episodes = Table(EPISODE_COLUMNS)
    for log in logs:
        episodes.rows.append(episode_row(log, thresholds))
    if not episodes.rows:
        raise EmptyStreamError("no episodes to aggregate")
    episodes.rows.sort()  # whole-row order: independent of stream order and sharding
    col = {c: i for i, c in enumerate(EPISODE_COLUMNS)}

    rvd = Table(("env", "strategy", "target_distance", "cumulative_reward"))
    for r in episodes.rows:
        if r[col["success"]]:
            rvd.rows.append((r[col["env"]], r[col["strategy"]], r[col["target_distance"]], r[col["cumulative_reward"]]))

    by_env = defaultdict(list)
    for r in episodes.rows:
        by_env[r[col["env"]]].append(r)

    svx = Table(("env", "bin_lo", "bin_hi", "episodes", "successes", "success_rate", "density"))
    hist = Table(("env", "attempts", "episodes", "mean_steps_remaining"))
    summary = Table(("env", "episodes", "success_rate", "mean_reward", "grab_share", "punch_share",
                     "mean_attempts"))
    densities = {}
    for env in sorted(by_env):
        rows = by_env[env]
        xs = np.array([r[col["target_x"]] for r in rows])
        ok = np.array([bool(r[col["success"]]) for r in rows])
        lo, hi = target_x_range(env, xs)
        kde = ReflectedKDE(xs[ok], bandwidth, lo, hi)
        densities[env] = kde
        edges = _bins(lo, hi, bin_width)
        idx = np.clip(np.searchsorted(edges, xs, side="right") - 1, 0, len(edges) - 2)
        centres = 0.5 * (edges[:-1] + edges[1:])
        dens = kde(centres)
        for b in range(len(edges) - 1):
            sel = idx == b
            n, k = int(sel.sum()), int(ok[sel].sum())
            svx.rows.append((env, float(edges[b]), float(edges[b + 1]), n, k, k / n if n else 0.0, float(dens[b])))

        groups = defaultdict(list)
        for r in rows:
            groups[r[col["attempts"]]].append(r[col["steps_remaining"]])
        for a in sorted(groups):
            hist.rows.append((env, a, len(groups[a]), float(np.mean(groups[a]))))

        strategies = [r[col["strategy"]] for r in rows if r[col["success"]]]
        n_succ = max(len(strategies), 1)
        summary.rows.append((env, len(rows), float(ok.mean()), float(np.mean([r[col["cumulative_reward"]] for r in rows])),
                             strategies.count("grab") / n_succ, strategies.count("punch") / n_succ,
                             float(np.mean([r[col["attempts"]] for r in rows]))))
    return Tables(episodes, rvd, svx, hist, summary, densities)
