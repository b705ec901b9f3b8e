"""Experiment orchestration: pool pretraining, strategy cells, sweeps and reports.

Output layout under an experiment directory::

    experiment.json            spec echo, used by report() to list missing runs
    pretrained.ckpt            pool model when none was supplied
    results.csv                one row per (cell, repeat)
    sweep_runs.csv             one row per sweep run
    sweep.csv                  long format: tau_E, tau_U, metric, mean, std
    runs/<cell>/r<k>/          config.json, result.json, predictions.f4, final.ckpt
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .engine import (
    EPISMART,
    NEIGHBORHOOD,
    NO_UPDATE,
    RANDOM_UPDATE,
    RANDOM_UPDATE_SL,
    UPDATE_EVERY_HOUR,
    AnnotationOracle,
    EngineConfig,
    RunResult,
    run,
    selection_rate,
)
from .errors import InvalidConfigError, StreamAdaptError
from .model import Classifier, desk_architecture, dumps_checkpoint, load_checkpoint, predict_batch
from .scoring import METRIC_COLUMNS, MetricsReport, ScoringConfig, append_csv_row, score_predictions
from .signal import (
    DriftPoint,
    PreprocessConfig,
    StreamSpec,
    WindowedStream,
    label_windows,
    load_stream,
    preprocess,
)
from .trainer import TrainConfig, train_arrays
from .util import atomic_write_bytes, atomic_write_json

log = logging.getLogger(__name__)

HOUR = 3600.0
OUT_ENV = "STREAMADAPT_OUT"
DEFAULT_OUT = "streamadapt-results"

RUN_COLUMNS = ["cell_id", "strategy", "repeat", "seed", "tau_E", "tau_U", "random_rate",
               "status", "error", "wall_time_s"] + METRIC_COLUMNS
SWEEP_COLUMNS = ["tau_E", "tau_U", "metric", "mean", "std", "n"]
SMOOTHING_COLUMNS = ["smooth_len", "metric", "mean", "std", "n"]

RANDOM_STRATEGIES = (RANDOM_UPDATE, RANDOM_UPDATE_SL)


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


# ---------------------------------------------------------------------------
# desk-scale defaults
# ---------------------------------------------------------------------------

# Small model and one CPU: a larger step and short patience keep each update
# to a few seconds. The replay buffer holds ten minutes of windows.
DESK_TRAIN = TrainConfig(max_epochs=20, early_stop_patience=5, plateau_patience=3,
                         lr0=1e-3, batch_size=32)
DESK_PRETRAIN = TrainConfig(max_epochs=30, early_stop_patience=6, plateau_patience=3,
                            lr0=1e-3, batch_size=64)
DESK_BUFFER = 600
# entropy gate in nats, set for the desk model's confidence scale
DESK_TAU_E = 0.3
DESK_EVENT_DURATION_S = (20.0, 45.0)
DESK_PREPROCESS = PreprocessConfig(highpass_hz=0.5, lowpass=False, notch=False)


def desk_subject_spec(hours: float = 48.0, seed: int | None = None,
                      full_scale: bool = False,
                      event_duration_s: tuple = DESK_EVENT_DURATION_S) -> StreamSpec:
    """Test subject: three regime changes plus artifact bursts in the 3-4.5 Hz band.

    The artifacts sit inside the band the pool model learned to call events,
    so an unadapted model raises false alarms on them. ``full_scale`` gives
    18 channels at 256 Hz instead of 4 at 64 Hz.
    """
    drift = [
        DriftPoint(0.0, (1.0, 1.0, 1.0, 1.0), 1.0, 1.5 * HOUR),
        DriftPoint(12 * HOUR, (1.6, 0.8, 1.3, 1.0), 1.2, 1.5 * HOUR),
        DriftPoint(24 * HOUR, (0.7, 1.5, 1.0, 1.8), 0.9, 1.5 * HOUR),
        DriftPoint(36 * HOUR, (1.2, 1.2, 0.6, 1.4), 1.5, 1.5 * HOUR),
    ]
    drift = [d for d in drift if d.time_s < hours * HOUR]
    channels, rate = 4, 64.0
    if full_scale:
        channels, rate = 18, 256.0
        drift = [replace(d, gains=tuple(d.gains[i % 4] for i in range(channels))) for d in drift]
    return StreamSpec(channels=channels, rate_hz=rate, duration_s=hours * HOUR, drift=drift,
                      event_band_hz=(5.0, 6.5), artifact_band_hz=(3.0, 4.5),
                      artifact_mean_gap_s=1.5 * HOUR, event_mean_gap_s=4 * HOUR,
                      event_duration_s=tuple(event_duration_s), seed=seed)


def pool_subject_spec(i: int, seed: int, hours: float = 8.0) -> StreamSpec:
    """Pool subject ``i``: its own event band, and gains that change once mid-stream."""
    rng = np.random.default_rng([seed, i])
    f = rng.uniform(3.0, 8.0)
    g0 = tuple(float(g) for g in rng.uniform(0.7, 1.4, 4))
    g1 = tuple(float(g) for g in rng.uniform(0.7, 1.4, 4))
    change = float(rng.uniform(0.3, 0.7)) * hours * HOUR
    drift = [DriftPoint(0.0, g0, 1.0, 2 * HOUR),
             DriftPoint(change, g1, float(rng.uniform(0.8, 1.3)), 2 * HOUR)]
    return StreamSpec(duration_s=hours * HOUR, drift=drift, event_band_hz=(f - 0.7, f + 0.7),
                      artifact_band_hz=(12.0, 15.0), event_mean_gap_s=3 * HOUR,
                      seed=int(rng.integers(2**31)))


def desk_engine_config(strategy: str = EPISMART, **kw) -> EngineConfig:
    base = dict(strategy=strategy, tau_E=DESK_TAU_E, tau_U=15, buffer_capacity=DESK_BUFFER,
                train=replace(DESK_TRAIN))
    base.update(kw)
    return EngineConfig(**base)


# ---------------------------------------------------------------------------
# spec types
# ---------------------------------------------------------------------------


@dataclass
class Cell:
    cell_id: str
    stream: StreamSpec
    engine: EngineConfig
    scoring: ScoringConfig = field(default_factory=ScoringConfig)

    def to_dict(self):
        return {"cell_id": self.cell_id, "stream": self.stream.to_dict(),
                "engine": self.engine.to_dict(), "scoring": self.scoring.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["cell_id"], StreamSpec.from_dict(d["stream"]),
                   EngineConfig.from_dict(d["engine"]),
                   ScoringConfig(**d.get("scoring", {})))


@dataclass
class ExperimentSpec:
    cells: list
    repeats: int = 3
    seed_base: int = 0
    out_dir: str | None = None
    checkpoint: str | None = None
    preprocess: PreprocessConfig = field(default_factory=lambda: replace(DESK_PREPROCESS))

    def __post_init__(self):
        self.cells = [c if isinstance(c, Cell) else Cell.from_dict(c) for c in self.cells]
        if isinstance(self.preprocess, dict):
            self.preprocess = PreprocessConfig(**self.preprocess)
        self.validate()

    def validate(self):
        if self.repeats < 1:
            raise InvalidConfigError("repeats must be >= 1")
        ids = [c.cell_id for c in self.cells]
        if len(set(ids)) != len(ids):
            raise InvalidConfigError("cell identifiers must be unique")

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir) if self.out_dir else default_out_root()

    def to_dict(self):
        return {"cells": [c.to_dict() for c in self.cells], "repeats": self.repeats,
                "seed_base": self.seed_base, "out_dir": self.out_dir,
                "checkpoint": self.checkpoint, "preprocess": asdict(self.preprocess)}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def desk_benchmark(strategies=(NO_UPDATE, EPISMART, RANDOM_UPDATE, UPDATE_EVERY_HOUR),
                   hours: float = 48.0, repeats: int = 3, out_dir=None, **engine_kw):
    cells = [Cell(s, desk_subject_spec(hours), desk_engine_config(s, **engine_kw))
             for s in strategies]
    return ExperimentSpec(cells, repeats=repeats, out_dir=None if out_dir is None else str(out_dir))


@dataclass
class AggregateRow:
    cell_id: str
    strategy: str
    n: int
    mean: dict
    std: dict
    expected: int | None = None

    @property
    def missing(self) -> int:
        return 0 if self.expected is None else max(0, self.expected - self.n)


# ---------------------------------------------------------------------------
# pool pretraining
# ---------------------------------------------------------------------------


@dataclass
class PretrainResult:
    model: Classifier
    report: object
    heldout_f1: float
    checkpoint_bytes: bytes
    path: str | None = None


def window_f1(y_true, y_pred) -> float:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int((y_true & y_pred).sum())
    denom = int(y_true.sum()) + int(y_pred.sum())
    return 2 * tp / denom if denom else 0.0


def _subject_windows(spec, prep_cfg, duration_s=4.0, stride_s=1.0):
    block, events = load_stream(spec)
    ws = WindowedStream(preprocess(block, prep_cfg), duration_s, stride_s)
    return ws, label_windows(ws.starts, duration_s, events)


def pretrain_pool(n_subjects: int = 4, pool_spec=None, train: TrainConfig | None = None,
                  seed: int = 0, out=None, negatives_per_subject: int = 3000,
                  prep: PreprocessConfig | None = None,
                  arch=None) -> PretrainResult:
    """Train the subject-independent starting model on a synthetic pool.

    ``pool_spec`` maps a subject index to a :class:`StreamSpec` (default
    :func:`pool_subject_spec`). The last subject is held out and scored with
    window-level F1; the others are pooled, subsampled to
    ``negatives_per_subject`` background windows each and trained on with
    class balancing.
    """
    if n_subjects < 2:
        raise InvalidConfigError("pool pretraining needs at least two subjects")
    prep = prep or DESK_PREPROCESS
    train = train or replace(DESK_PRETRAIN, seed=seed)
    make = pool_spec or (lambda i: pool_subject_spec(i, seed))
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for i in range(n_subjects - 1):
        ws, lab = _subject_windows(make(i), prep)
        pos = np.flatnonzero(lab == 1)
        neg = np.flatnonzero(lab == 0)
        if len(neg) > negatives_per_subject:
            neg = rng.choice(neg, negatives_per_subject, replace=False)
        idx = np.sort(np.concatenate([pos, neg]))
        xs.append(ws.take(idx))
        ys.append(lab[idx])
    x = np.concatenate(xs)
    y = np.concatenate(ys).astype(np.int64)
    arch = arch or desk_architecture(x.shape[1], x.shape[2])
    model, report = train_arrays(Classifier(arch, seed=seed), x, y, train,
                                 rate_hz=x.shape[2] / 4.0, rng=rng)
    ws, lab = _subject_windows(make(n_subjects - 1), prep)
    _, _, _, pred = predict_batch(model, ws.batch(0, len(ws)))
    f1 = window_f1(lab, pred)
    raw = dumps_checkpoint(model)
    if out is not None:
        atomic_write_bytes(out, raw)
    log.info("pool model: %d windows, held-out window F1 %.3f", len(y), f1)
    return PretrainResult(model, report, f1, raw, None if out is None else str(out))


def ensure_checkpoint(spec: ExperimentSpec) -> Path:
    """Path of the starting model, pretraining the default pool if needed."""
    if spec.checkpoint:
        path = Path(spec.checkpoint)
        if not path.exists():
            raise InvalidConfigError(f"checkpoint {path} does not exist")
        return path
    path = spec.out_path / "pretrained.ckpt"
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        pretrain_pool(seed=spec.seed_base, out=path)
    return path


# ---------------------------------------------------------------------------
# running cells
# ---------------------------------------------------------------------------

_STREAM_CACHE: OrderedDict = OrderedDict()
_STREAM_CACHE_SIZE = 2


def prepare_stream(stream: StreamSpec, seed, prep: PreprocessConfig):
    """Windowed, preprocessed stream and its reference events (small LRU cache)."""
    key = json.dumps([stream.to_dict(), seed, asdict(prep)], sort_keys=True, default=str)
    hit = _STREAM_CACHE.get(key)
    if hit is not None:
        _STREAM_CACHE.move_to_end(key)
        return hit
    block, events = load_stream(stream, seed)
    ws = WindowedStream(preprocess(block, prep), 4.0, 1.0)
    _STREAM_CACHE[key] = (ws, events)
    while len(_STREAM_CACHE) > _STREAM_CACHE_SIZE:
        _STREAM_CACHE.popitem(last=False)
    return ws, events


@dataclass
class CellOutcome:
    cell_id: str
    repeat: int
    seed: int
    result: RunResult | None
    metrics: MetricsReport | None
    error: str | None
    row: dict
    run_dir: Path | None = None


_PAIRED: dict = {}


def _paired_rate(cell: Cell, seed, prep, model) -> float:
    """Selection rate of a paired episMART run that shares this cell's stream and seed."""
    key = json.dumps([cell.to_dict(), seed, asdict(prep), hashlib.sha256(
        dumps_checkpoint(model)).hexdigest()], sort_keys=True, default=str)
    if key not in _PAIRED:
        ws, events = prepare_stream(cell.stream, seed, prep)
        cfg = replace(cell.engine, strategy=EPISMART, seed=seed,
                      train=replace(cell.engine.train, seed=seed))
        res = run(ws, cfg, AnnotationOracle(events, cfg.overlap_fraction), model)
        _PAIRED[key] = selection_rate(res)
    return _PAIRED[key]


def _result_json(res: RunResult, metrics: MetricsReport, extra: dict) -> dict:
    return {
        "metrics": metrics.to_dict(),
        "n_updates": res.n_updates,
        "updates": [asdict(u) for u in res.update_log],
        "selections": [asdict(s) for s in res.selections],
        "labeled_intervals": [[float(s), float(e)] for s, e in res.labeled_intervals],
        "incidents": res.incidents,
        "pending_at_end": res.pending_at_end,
        "stage0": {"windows": res.stage0_windows, "queries": res.stage0_queries,
                   "update": res.stage0_report},
        "oracle_queries": res.oracle_queries,
        "stream_duration_s": res.stream_duration_s,
        "eval_start_s": res.eval_start_s,
        "first_prediction_index": int(res.indices[0]) if len(res.indices) else None,
        **extra,
    }


def run_cell(cell: Cell, repeat: int, spec: ExperimentSpec, model: Classifier | None = None,
             csv_name: str = "results.csv", write: bool = True) -> CellOutcome:
    """Run one (cell, repeat) pair, persist its artifacts and append a CSV row.

    Engine and scoring failures are caught and recorded in the row so that
    other cells keep running.
    """
    seed = spec.seed_base + repeat
    t0 = time.perf_counter()
    out = spec.out_path
    run_dir = out / "runs" / cell.cell_id / f"r{repeat}"
    row = {"cell_id": cell.cell_id, "strategy": cell.engine.strategy, "repeat": repeat,
           "seed": seed, "tau_E": cell.engine.tau_E, "tau_U": cell.engine.tau_U,
           "random_rate": cell.engine.random_rate}
    result = metrics = None
    error = None
    try:
        ckpt = None
        if model is None:
            ckpt = ensure_checkpoint(spec)
            model = load_checkpoint(ckpt)
        engine_cfg = replace(cell.engine, seed=seed, train=replace(cell.engine.train, seed=seed))
        if engine_cfg.strategy in RANDOM_STRATEGIES and engine_cfg.random_rate == 0:
            engine_cfg.random_rate = _paired_rate(cell, seed, spec.preprocess, model)
        row["random_rate"] = engine_cfg.random_rate
        ws, events = prepare_stream(cell.stream, seed, spec.preprocess)
        result = run(ws, engine_cfg, AnnotationOracle(events, engine_cfg.overlap_fraction), model)
        metrics = score_predictions(result.labels, result.starts, result.duration_s, events,
                                    result.stream_days, cell.scoring, result.labeled_intervals,
                                    result.n_updates, result.eval_start_s)
        row.update(metrics.to_dict())
        row["status"] = "ok"
        if write:
            run_dir.mkdir(parents=True, exist_ok=True)
            echo = {"cell": replace(cell, engine=engine_cfg).to_dict(), "repeat": repeat,
                    "seed": seed, "preprocess": asdict(spec.preprocess),
                    "checkpoint": None if ckpt is None else str(ckpt),
                    "checkpoint_sha256": hashlib.sha256(dumps_checkpoint(model)).hexdigest()}
            atomic_write_json(run_dir / "config.json", echo)
            atomic_write_bytes(run_dir / "predictions.f4", result.p1.astype("<f4").tobytes())
            atomic_write_bytes(run_dir / "final.ckpt", dumps_checkpoint(result.final_model))
            atomic_write_json(run_dir / "result.json", _result_json(
                result, metrics, {"cell_id": cell.cell_id, "repeat": repeat, "seed": seed}))
    except (StreamAdaptError, ValueError, FloatingPointError, OSError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        log.warning("cell %s repeat %d failed: %s", cell.cell_id, repeat, error)
        row["status"] = "error"
        row["error"] = error
    row["wall_time_s"] = round(time.perf_counter() - t0, 3)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        append_csv_row(out / csv_name, row, RUN_COLUMNS)
    return CellOutcome(cell.cell_id, repeat, seed, result, metrics, error, row,
                       run_dir if write else None)


def run_experiment(spec: ExperimentSpec, model: Classifier | None = None) -> list:
    out = spec.out_path
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out / "experiment.json", spec.to_dict())
    if model is None:
        model = load_checkpoint(ensure_checkpoint(spec))
    return [run_cell(c, r, spec, model) for c in spec.cells for r in range(spec.repeats)]


def sweep(base: Cell, tau_E_values, tau_U_values, spec: ExperimentSpec,
          model: Classifier | None = None) -> list:
    """Run ``base`` over the (tau_E, tau_U) grid and write the long-format table.

    Returns the per-run :class:`CellOutcome` list; failed points are kept as
    error rows and the sweep moves on.
    """
    grid = [(float(e), int(u)) for e in tau_E_values for u in tau_U_values]
    if not grid:
        raise InvalidConfigError("sweep grid is empty")
    out = spec.out_path
    out.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = load_checkpoint(ensure_checkpoint(spec))
    outcomes = []
    for tau_E, tau_U in grid:
        cell = replace(base, cell_id=f"{base.cell_id}_tE{tau_E:g}_tU{tau_U}",
                       engine=replace(base.engine, tau_E=tau_E, tau_U=tau_U))
        for r in range(spec.repeats):
            outcomes.append(run_cell(cell, r, spec, model, csv_name="sweep_runs.csv"))
    write_sweep_table(out)
    return outcomes


def smoothing_sweep(cell: Cell, lengths, spec: ExperimentSpec,
                    model: Classifier | None = None) -> list:
    """Score ``cell`` at several moving-average lengths.

    The engine runs once per repeat; every length rescores the same
    predictions, so differences are due to post-processing alone. Writes
    ``smoothing.csv`` in long format and returns its rows.
    """
    lengths = [int(n) for n in lengths]
    if not lengths:
        raise InvalidConfigError("smoothing sweep needs at least one length")
    scorings = {n: replace(cell.scoring, smooth_len=n) for n in lengths}
    out = spec.out_path
    out.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = load_checkpoint(ensure_checkpoint(spec))
    per_len: dict = {n: [] for n in lengths}
    for r in range(spec.repeats):
        o = run_cell(cell, r, spec, model, csv_name="smoothing_runs.csv")
        if o.result is None:
            continue
        res = o.result
        _, events = prepare_stream(cell.stream, o.seed, spec.preprocess)
        for n, sc in scorings.items():
            m = score_predictions(res.labels, res.starts, res.duration_s, events,
                                  res.stream_days, sc, res.labeled_intervals, res.n_updates,
                                  res.eval_start_s)
            per_len[n].append(m.to_dict())
    table = []
    for n, ms in per_len.items():
        for metric in METRIC_COLUMNS:
            mean, std = _mean_std([m[metric] for m in ms])
            table.append({"smooth_len": n, "metric": metric, "mean": mean, "std": std,
                          "n": len(ms)})
    _write_table(out / "smoothing.csv", SMOOTHING_COLUMNS, table)
    return table


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def read_rows(path) -> list:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return math.nan, math.nan
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def aggregate(rows, expected: dict | None = None, key=("cell_id",)) -> list:
    """Mean and sample standard deviation of every metric per group of ok rows."""
    groups: OrderedDict = OrderedDict()
    for r in rows:
        if r.get("status", "ok") != "ok":
            continue
        groups.setdefault(tuple(r[k] for k in key), []).append(r)
    out = []
    for k, rs in groups.items():
        mean, std = {}, {}
        for m in METRIC_COLUMNS:
            mean[m], std[m] = _mean_std([float(r[m]) for r in rs])
        cell_id = "/".join(str(x) for x in k)
        out.append(AggregateRow(cell_id, rs[0]["strategy"], len(rs), mean, std,
                                None if expected is None else expected.get(cell_id)))
    return out


def write_sweep_table(out_dir) -> list:
    rows = read_rows(Path(out_dir) / "sweep_runs.csv")
    table = []
    for agg in aggregate(rows, key=("tau_E", "tau_U")):
        tau_E, tau_U = agg.cell_id.split("/")
        for m in METRIC_COLUMNS:
            table.append({"tau_E": float(tau_E), "tau_U": int(float(tau_U)), "metric": m,
                          "mean": agg.mean[m], "std": agg.std[m], "n": agg.n})
    if table:
        _write_table(Path(out_dir) / "sweep.csv", SWEEP_COLUMNS, table)
    return table


def _write_table(path: Path, columns, rows) -> None:
    tmp = path.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)
    os.replace(tmp, path)


@dataclass
class Report:
    strategies: list
    sweep: list
    missing: list
    errors: list

    @property
    def empty(self) -> bool:
        return not self.strategies and not self.sweep

    def format(self, metrics=("f1", "far", "labeling_cost", "update_cost")) -> str:
        lines = []
        if self.strategies:
            lines.append("cell".ljust(32) + "n  " + "".join(m.rjust(20) for m in metrics))
            for a in self.strategies:
                cells = "".join(f"{a.mean[m]:10.3f} ±{a.std[m]:7.3f}".rjust(20) for m in metrics)
                lines.append(a.cell_id.ljust(32) + f"{a.n:<3d}" + cells)
        if self.sweep:
            lines.append("")
            lines.append("sweep (tau_E, tau_U): " + ", ".join(
                f"({a.cell_id.replace('/', ', ')}) n={a.n}" for a in self.sweep))
        for cell_id, n in self.missing:
            lines.append(f"missing: {cell_id} has {n} run(s) outstanding")
        for e in self.errors:
            lines.append(f"error: {e['cell_id']} r{e['repeat']}: {e['error']}")
        return "\n".join(lines)


def report(out_dir) -> Report:
    """Aggregate ``results.csv`` and ``sweep_runs.csv`` found in ``out_dir``.

    A directory without results yields an empty report and a warning.
    """
    out = Path(out_dir)
    rows = read_rows(out / "results.csv")
    sweep_rows = read_rows(out / "sweep_runs.csv")
    expected = None
    exp_path = out / "experiment.json"
    if exp_path.exists():
        with open(exp_path) as fh:
            exp = json.load(fh)
        expected = {c["cell_id"]: exp.get("repeats", 1) for c in exp.get("cells", [])}
    strategies = aggregate(rows, expected)
    missing = []
    if expected:
        done = {a.cell_id: a.n for a in strategies}
        missing = [(c, n - done.get(c, 0)) for c, n in expected.items() if done.get(c, 0) < n]
    rep = Report(strategies, aggregate(sweep_rows, key=("tau_E", "tau_U")), missing,
                 [r for r in rows + sweep_rows if r.get("status") == "error"])
    if rep.empty:
        warnings.warn(f"no results found in {out}", stacklevel=2)
    else:
        if sweep_rows:
            write_sweep_table(out)
        summary = out / "summary.csv"
        tmp = summary.with_suffix(".csv.tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_id", "strategy", "n", "metric", "mean", "std"])
            for a in strategies:
                for m in METRIC_COLUMNS:
                    w.writerow([a.cell_id, a.strategy, a.n, m, a.mean[m], a.std[m]])
        os.replace(tmp, summary)
    return rep


__all__ = [
    "AggregateRow", "Cell", "CellOutcome", "DESK_BUFFER", "DESK_PREPROCESS", "DESK_TAU_E",
    "DESK_TRAIN", "ExperimentSpec", "NEIGHBORHOOD", "PretrainResult", "Report", "aggregate",
    "desk_benchmark", "desk_engine_config", "desk_subject_spec", "ensure_checkpoint",
    "pool_subject_spec", "prepare_stream", "pretrain_pool", "report", "run_cell",
    "run_experiment", "smoothing_sweep", "sweep", "window_f1",
]
