"""Per-step episode traces and their JSON-lines file format.

One file holds one evaluation run.  Each episode is a header line followed by
exactly ``horizon`` step lines::

    {"type": "header", "env": "wall", "seed": 3, "episode_index": 0, "target": [x, y, z]}
    {"type": "step", "step": 0, "gripper_pos": [...], "finger_gap": 0.05, ...}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np

HORIZON = 60

_STEP_VECTORS = {"gripper_pos": 3, "box_pos": 3, "box_vel": 3, "action": 4}
_STEP_FLAGS = ("gripper_box_contact", "grasped")


class LogParseError(ValueError):
    """A log file or record does not follow the episode-log format."""


@dataclass
class EpisodeLog:
    env: str
    seed: int
    episode_index: int
    target: np.ndarray  # (3,)
    gripper_pos: np.ndarray  # (T, 3), after each step
    finger_gap: np.ndarray  # (T,)
    box_pos: np.ndarray  # (T, 3)
    box_vel: np.ndarray  # (T, 3)
    action: np.ndarray  # (T, 4)
    reward: np.ndarray  # (T,)
    gripper_box_contact: np.ndarray  # (T,) bool
    grasped: np.ndarray  # (T,) bool
    extra: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(self.reward.shape[0])

    @property
    def cumulative_reward(self) -> float:
        return float(np.sum(self.reward))

    def validate(self, horizon: int = HORIZON) -> None:
        if self.n_steps != horizon:
            raise LogParseError(f"episode has {self.n_steps} steps, expected {horizon}")
        if not np.all((self.reward == 0.0) | (self.reward == -1.0)):
            raise LogParseError("rewards must be 0 or -1")
        for name, width in _STEP_VECTORS.items():
            arr = getattr(self, name)
            if arr.shape != (horizon, width):
                raise LogParseError(f"{name} has shape {arr.shape}, expected {(horizon, width)}")
        if self.target.shape != (3,):
            raise LogParseError("target must have 3 components")

    # -- JSON lines -------------------------------------------------------------

    def to_records(self) -> list[dict]:
        head = {"type": "header", "env": self.env, "seed": int(self.seed),
                "episode_index": int(self.episode_index), "target": [float(v) for v in self.target]}
        head.update(self.extra)
        lines = [head]
        for t in range(self.n_steps):
            rec = {"type": "step", "step": t}
            for name in _STEP_VECTORS:
                rec[name] = [float(v) for v in getattr(self, name)[t]]
            rec["finger_gap"] = float(self.finger_gap[t])
            rec["reward"] = float(self.reward[t])
            for name in _STEP_FLAGS:
                rec[name] = bool(getattr(self, name)[t])
            lines.append(rec)
        return lines

    @classmethod
    def from_records(cls, header: dict, steps: list[dict], horizon: int = HORIZON) -> EpisodeLog:
        try:
            if [s["step"] for s in steps] != list(range(len(steps))):
                raise LogParseError("step indices are not consecutive from 0")
            known = {"type", "env", "seed", "episode_index", "target"}
            log = cls(
                env=str(header["env"]), seed=int(header["seed"]),
                episode_index=int(header["episode_index"]),
                target=np.asarray(header["target"], dtype=np.float64),
                **{name: np.asarray([s[name] for s in steps], dtype=np.float64).reshape(len(steps), w)
                   for name, w in _STEP_VECTORS.items()},
                finger_gap=np.asarray([s["finger_gap"] for s in steps], dtype=np.float64),
                reward=np.asarray([s["reward"] for s in steps], dtype=np.float64),
                **{name: np.asarray([s[name] for s in steps], dtype=bool) for name in _STEP_FLAGS},
                extra={k: v for k, v in header.items() if k not in known},
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, LogParseError):
                raise
            raise LogParseError(f"malformed episode record: {exc!r}") from exc
        log.validate(horizon)
        return log


def write_episode(fh: TextIO, log: EpisodeLog) -> None:
    for rec in log.to_records():
        fh.write(json.dumps(rec, sort_keys=True))
        fh.write("\n")


def write_log_file(path, logs: Iterable[EpisodeLog]) -> None:
    with open(path, "w") as fh:
        for log in logs:
            write_episode(fh, log)


def iter_log_file(path, horizon: int = HORIZON) -> Iterator[EpisodeLog]:
    """Stream episodes from one JSON-lines file."""
    header, steps = None, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogParseError(f"{path}:{lineno}: invalid JSON") from exc
            kind = rec.get("type") if isinstance(rec, dict) else None
            if kind == "header":
                if header is not None:
                    yield EpisodeLog.from_records(header, steps, horizon)
                header, steps = rec, []
            elif kind == "step":
                if header is None:
                    raise LogParseError(f"{path}:{lineno}: step record before any header")
                steps.append(rec)
            else:
                raise LogParseError(f"{path}:{lineno}: unknown record type {kind!r}")
    if header is not None:
        yield EpisodeLog.from_records(header, steps, horizon)


def iter_log_dir(path, horizon: int = HORIZON) -> Iterator[EpisodeLog]:
    """All episodes of every ``*.jsonl`` file under ``path`` (or ``path`` itself if it is a file)."""
    p = Path(path)
    files = [p] if p.is_file() else sorted(p.glob("*.jsonl"))
    for f in files:
        yield from iter_log_file(f, horizon)
