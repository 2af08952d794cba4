"""Grab/punch event classification and attempt counting on single episodes."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .episode_log import EpisodeLog


class EventKind(str, enum.Enum):
    GRAB = "grab"
    PUNCH = "punch"


@dataclass(frozen=True)
class Thresholds:
    punch_displacement: float = 0.01  # m, below this a contact interval is not an event
    release_speed: float = 0.05  # m/s, box speed right after contact ends for the event to count as an attempt


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class ActionEvent:
    kind: EventKind
    start_step: int
    end_step: int  # inclusive
    box_displacement: float


@dataclass(frozen=True)
class AttemptCount:
    attempts: int
    attempts_before_success: int
    steps_remaining: int
    first_success_step: int | None


def contact_intervals(contact: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as inclusive (start, end) pairs."""
    c = np.concatenate([[False], np.asarray(contact, dtype=bool), [False]])
    edges = np.flatnonzero(c[1:] != c[:-1])
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def _start_position(log: EpisodeLog) -> np.ndarray:
    if "box_start" in log.extra:
        return np.asarray(log.extra["box_start"], dtype=np.float64)
    return log.box_pos[0]


def classify_events(log: EpisodeLog, th: Thresholds = DEFAULT_THRESHOLDS) -> list[ActionEvent]:
    """One event per contact interval that moved the box more than ``th.punch_displacement``.

    The displacement of an interval runs from the box position just before
    contact to its position when the next contact starts (or the episode
    ends), so a launch that happens at release is credited to the contact
    that caused it.
    """
    log.validate(log.n_steps)
    intervals = contact_intervals(log.gripper_box_contact)
    events = []
    for i, (a, b) in enumerate(intervals):
        before = log.box_pos[a - 1] if a > 0 else _start_position(log)
        upto = intervals[i + 1][0] - 1 if i + 1 < len(intervals) else log.n_steps - 1
        disp = float(np.linalg.norm(log.box_pos[upto] - before))
        if disp <= th.punch_displacement:
            continue
        kind = EventKind.GRAB if bool(np.any(log.grasped[a:b + 1])) else EventKind.PUNCH
        events.append(ActionEvent(kind, a, b, disp))
    return events


def first_success_step(log: EpisodeLog) -> int | None:
    hits = np.flatnonzero(log.reward == 0.0)
    return int(hits[0]) if hits.size else None


def _released(log: EpisodeLog, ev: ActionEvent, th: Thresholds) -> bool:
    t = ev.end_step + 1
    if t >= log.n_steps:
        return False
    return float(np.linalg.norm(log.box_vel[t])) > th.release_speed


def count_attempts(log: EpisodeLog, th: Thresholds = DEFAULT_THRESHOLDS,
                   events: list[ActionEvent] | None = None) -> AttemptCount:
    """Events followed by a release at speed, and the steps left at the first success.

    ``attempts_before_success`` counts the attempts that ended before the one
    that scored (the last attempt ending no later than the first success).
    """
    events = classify_events(log, th) if events is None else events
    attempts = [ev for ev in events if _released(log, ev, th)]
    first = first_success_step(log)
    if first is None:
        return AttemptCount(len(attempts), len(attempts), 0, None)
    scoring = [ev for ev in attempts if ev.end_step <= first]
    before = max(len(scoring) - 1, 0)
    return AttemptCount(len(attempts), before, log.n_steps - first, first)
