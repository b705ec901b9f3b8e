"""Post-processing of per-window predictions and event-level metrics."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import InvalidConfigError
from .signal import EventInterval

SECONDS_PER_DAY = 86400.0


@dataclass
class ScoringConfig:
    smooth_len: int = 10
    decision_threshold: float = 0.5
    pre_tolerance_s: float = 30.0
    post_tolerance_s: float = 60.0
    merge_gap_s: float = 90.0
    min_event_s: float = 4.0

    def __post_init__(self):
        if self.smooth_len < 1:
            raise InvalidConfigError("smooth_len must be >= 1")
        if min(self.pre_tolerance_s, self.post_tolerance_s, self.merge_gap_s,
               self.min_event_s) < 0:
            raise InvalidConfigError("tolerances must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class MetricsReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    far: float = 0.0
    labeling_cost: float = 0.0
    labeling_cost_naive: float = 0.0
    update_cost: float = 0.0
    stream_days: float = 0.0

    def to_dict(self):
        return asdict(self)


METRIC_COLUMNS = [f.name for f in fields(MetricsReport)]


def smooth(labels, cfg: ScoringConfig | None = None) -> np.ndarray:
    """Trailing moving-average vote over binary labels.

    ``decision[k] = 1`` iff the mean of the last ``smooth_len`` labels (fewer
    during warm-up) reaches ``decision_threshold``. Probabilities passed in are
    first turned into labels with a 0.5 cut.
    """
    cfg = cfg or ScoringConfig()
    x = np.asarray(labels, dtype=np.float64)
    if x.size == 0:
        return np.zeros(0, dtype=np.int8)
    if not np.all((x == 0) | (x == 1)):
        x = (x > 0.5).astype(np.float64)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    k = np.arange(1, len(x) + 1)
    lo = np.maximum(k - cfg.smooth_len, 0)
    counts = csum[k] - csum[lo]
    n = k - lo
    return (counts >= cfg.decision_threshold * n - 1e-12).astype(np.int8)


def extract_events(decisions, starts, duration_s: float,
                   cfg: ScoringConfig | None = None) -> list:
    """Turn runs of positive decisions into merged, length-filtered intervals."""
    cfg = cfg or ScoringConfig()
    d = np.asarray(decisions).astype(bool)
    starts = np.asarray(starts, dtype=np.float64)
    if d.size == 0 or not d.any():
        return []
    edges = np.diff(np.concatenate([[0], d.astype(np.int8), [0]]))
    run_start = np.flatnonzero(edges == 1)
    run_end = np.flatnonzero(edges == -1) - 1
    merged = []
    for a, b in zip(run_start, run_end):
        s, e = starts[a], starts[b] + duration_s
        if merged and s - merged[-1][1] < cfg.merge_gap_s:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [EventInterval(float(s), float(e)) for s, e in merged if e - s >= cfg.min_event_s]


def match_events(predicted, reference, cfg: ScoringConfig | None = None) -> tuple:
    """Event-level ``(tp, fp, fn)`` with tolerance-extended references.

    Both lists must be sorted and non-overlapping. Runs as a single sweep over
    the two lists.
    """
    cfg = cfg or ScoringConfig()
    ext = [(r.start_s - cfg.pre_tolerance_s, r.end_s + cfg.post_tolerance_s) for r in reference]
    hit = [False] * len(ext)
    fp = 0
    j0 = 0
    for p in predicted:
        # extended references may overlap one another; skip those ending before p
        while j0 < len(ext) and ext[j0][1] <= p.start_s:
            j0 += 1
        matched = False
        j = j0
        while j < len(ext) and ext[j][0] < p.end_s:
            if ext[j][1] > p.start_s:
                hit[j] = True
                matched = True
            j += 1
        if not matched:
            fp += 1
    tp = sum(hit)
    return tp, fp, len(ext) - tp


def f1_far(tp: int, fp: int, fn: int, stream_days: float) -> tuple:
    if stream_days <= 0:
        raise InvalidConfigError("stream_days must be positive")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1, fp / stream_days


def interval_union_s(intervals) -> float:
    """Total length of the union of ``(start, end)`` pairs or EventIntervals."""
    pairs = sorted(
        (i.start_s, i.end_s) if isinstance(i, EventInterval) else (float(i[0]), float(i[1]))
        for i in intervals
    )
    total = 0.0
    cur_s = cur_e = None
    for s, e in pairs:
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def costs(labeled_intervals, n_updates: int, stream_days: float) -> tuple:
    """``(labeling_cost, labeling_cost_naive, update_cost)`` per day.

    ``labeled_intervals`` must already exclude the initial-adaptation hour.
    """
    if stream_days <= 0:
        raise InvalidConfigError("stream_days must be positive")
    union_min = interval_union_s(labeled_intervals) / 60.0
    naive_min = sum(
        (i.end_s - i.start_s) if isinstance(i, EventInterval) else (i[1] - i[0])
        for i in labeled_intervals
    ) / 60.0
    return union_min / stream_days, naive_min / stream_days, n_updates / stream_days


def score_predictions(labels, starts, duration_s, reference, stream_days,
                      cfg: ScoringConfig | None = None, labeled_intervals=(),
                      n_updates: int = 0, eval_start_s: float | None = None) -> MetricsReport:
    """Full post-processing and metric computation for one prediction log.

    Reference events ending before ``eval_start_s`` are ignored, and ones that
    straddle it are clipped, so the initial-adaptation span is not scored.
    """
    cfg = cfg or ScoringConfig()
    if eval_start_s is not None:
        reference = [
            EventInterval(max(r.start_s, eval_start_s), r.end_s)
            for r in reference
            if r.end_s > eval_start_s
        ]
    decisions = smooth(labels, cfg)
    predicted = extract_events(decisions, starts, duration_s, cfg)
    tp, fp, fn = match_events(predicted, reference, cfg)
    p, r, f1, far = f1_far(tp, fp, fn, stream_days)
    lab, lab_naive, upd = costs(labeled_intervals, n_updates, stream_days)
    return MetricsReport(tp, fp, fn, p, r, f1, far, lab, lab_naive, upd, stream_days)


def append_csv_row(path, row: dict, columns) -> None:
    """Append one row, writing the header first if the file is new.

    The row is formatted in memory and written with a single ``write`` call on
    an ``O_APPEND`` descriptor so concurrent writers do not interleave.
    """
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore")
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    if new:
        w.writeheader()
    w.writerow(row)
    fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    try:
        os.write(fd, buf.getvalue().encode("utf-8"))
    finally:
        os.close(fd)
