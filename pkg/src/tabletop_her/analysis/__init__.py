"""Behavioural analysis of evaluation logs: event classification, attempts, densities and figures."""
from .aggregate import BANDWIDTH, BIN_WIDTH, EmptyStreamError, ReflectedKDE, Table, Tables, aggregate
from .episode_log import HORIZON, EpisodeLog, LogParseError, iter_log_dir, iter_log_file, write_episode, write_log_file
from .events import (
    DEFAULT_THRESHOLDS, ActionEvent, AttemptCount, EventKind, Thresholds, classify_events, contact_intervals,
    count_attempts, first_success_step,
)
from .plots import render_plots

__all__ = [
    "BANDWIDTH", "BIN_WIDTH", "DEFAULT_THRESHOLDS", "HORIZON", "ActionEvent", "AttemptCount", "EmptyStreamError",
    "EpisodeLog", "EventKind", "LogParseError", "ReflectedKDE", "Table", "Tables", "Thresholds", "aggregate",
    "classify_events", "contact_intervals", "count_attempts", "first_success_step", "iter_log_dir",
    "iter_log_file", "render_plots", "write_episode", "write_log_file",
]
