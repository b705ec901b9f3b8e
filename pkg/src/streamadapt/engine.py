"""Stream-driven personalisation loop and its baseline/ablation strategies.

Each incoming window is first scored with the current model (prequential
evaluation). Strategy-specific selection then decides whether the window is
queued for annotation; once ``tau_U`` windows are queued they are labeled by
the oracle, added to the replay buffer, and the model is fine-tuned on the
buffer contents.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .buffer import EVICTION_POLICIES, BufferEntry, ReplayBuffer
from .errors import InvalidConfigError, TrainingDivergedError
from .model import Classifier, predict_batch
from .signal import EventInterval, Window, WindowedStream, interval_label
from .trainer import TrainConfig, fine_tune

log = logging.getLogger(__name__)

EPISMART = "episMART"
NO_UPDATE = "no_update"
UPDATE_EVERY_HOUR = "update_every_hour"
RANDOM_UPDATE = "random_update"
RANDOM_UPDATE_SL = "random_update_plus_seizure"
NEIGHBORHOOD = "episMART_with_neighborhood"
STRATEGIES = (EPISMART, NO_UPDATE, UPDATE_EVERY_HOUR, RANDOM_UPDATE, RANDOM_UPDATE_SL,
              NEIGHBORHOOD)
_CANONICAL = {s.lower(): s for s in STRATEGIES}


def canonical_strategy(name: str) -> str:
    try:
        return _CANONICAL[name.lower()]
    except KeyError:
        raise InvalidConfigError(
            f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}"
        ) from None


@dataclass
class EngineConfig:
    strategy: str = EPISMART
    tau_E: float = 1e-5
    tau_U: int = 15
    neighborhood_s: float = 60.0
    initial_adaptation_s: float = 3600.0
    update_interval_s: float = 3600.0
    buffer_capacity: int = 3600
    eviction: str = "uniform"
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    # per-window selection probability of the random strategies
    random_rate: float = 0.0
    # run stage 0 for no_update as well (controlled comparisons)
    no_update_stage0: bool = False
    overlap_fraction: float = 0.0
    predict_chunk: int = 2048

    def __post_init__(self):
        self.strategy = canonical_strategy(self.strategy)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if self.tau_E < 0:
            raise InvalidConfigError("tau_E must be >= 0")
        if int(self.tau_U) != self.tau_U or self.tau_U < 1:
            raise InvalidConfigError("tau_U must be an integer >= 1")
        self.tau_U = int(self.tau_U)
        if not 0 <= self.random_rate <= 1:
            raise InvalidConfigError("random_rate is a probability")
        if self.neighborhood_s < 0 or self.initial_adaptation_s < 0:
            raise InvalidConfigError("durations must be non-negative")
        if self.buffer_capacity < 1:
            raise InvalidConfigError("buffer_capacity must be >= 1")
        if self.eviction not in EVICTION_POLICIES:
            raise InvalidConfigError(f"unknown eviction policy {self.eviction!r}")

    @property
    def uses_stage0(self) -> bool:
        return self.strategy != NO_UPDATE or self.no_update_stage0

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class AnnotationOracle:
    """Stand-in for an expert: answers window labels from reference events."""

    def __init__(self, reference_events, overlap_fraction: float = 0.0):
        self.reference_events = sorted(reference_events)
        self.overlap_fraction = overlap_fraction
        self.queries = 0
        self.queried: list[int] = []

    def label(self, w: Window) -> int:
        self.queries += 1
        self.queried.append(w.index)
        return interval_label(
            w.start_time_s, w.start_time_s + w.duration_s, self.reference_events,
            self.overlap_fraction * w.duration_s,
        )


class WindowList:
    """Adapts a sequence of :class:`Window` to the WindowedStream interface."""

    def __init__(self, windows):
        self._w = list(windows)
        if not self._w:
            raise InvalidConfigError("empty window sequence")
        self.duration_s = self._w[0].duration_s
        self.stride_s = (self._w[1].start_time_s - self._w[0].start_time_s
                         if len(self._w) > 1 else 1.0)
        self.origin_s = self._w[0].start_time_s
        self.rate_hz = self._w[0].data.shape[-1] / self.duration_s
        self.total_duration_s = self._w[-1].end_time_s - self.origin_s

    def __len__(self):
        return len(self._w)

    @property
    def starts(self):
        return np.array([w.start_time_s for w in self._w])

    def start_time(self, i):
        return self._w[i].start_time_s

    def batch(self, i0, i1):
        return np.stack([w.data for w in self._w[i0:i1]])

    def take(self, idx):
        return np.stack([self._w[i].data for i in idx])

    def window(self, i):
        w = self._w[i]
        if w.index != i:
            w = Window(w.data, w.start_time_s, w.duration_s, i)
        return w


class _OneWindow:
    def __init__(self, w: Window):
        self._w = w
        self.duration_s = w.duration_s
        self.stride_s = 1.0
        self.rate_hz = w.data.shape[-1] / w.duration_s

    def start_time(self, i):
        return self._w.start_time_s

    def window(self, i):
        return self._w


def as_window_source(stream):
    if isinstance(stream, (WindowedStream, WindowList)):
        return stream
    return WindowList(stream)


@dataclass
class Selection:
    index: int
    reason: str
    start_s: float
    end_s: float


@dataclass
class UpdateRecord:
    trigger_index: int
    n_labeled: int
    buffer_counts: tuple
    report: dict
    error: str | None = None
    model_version: int = 0


@dataclass
class EngineState:
    model: Classifier
    buffer: ReplayBuffer
    config: EngineConfig
    select_rng: np.random.Generator
    train_rng: np.random.Generator
    counter: int = 0
    model_version: int = 0
    pending: list = field(default_factory=list)  # [(index, reason)]
    pending_neighbors: set = field(default_factory=set)
    neighbor_until: int = -1
    labeled_set: set = field(default_factory=set)
    since_update: list = field(default_factory=list)
    selections: list = field(default_factory=list)
    labeled_intervals: list = field(default_factory=list)
    update_log: list = field(default_factory=list)
    incidents: list = field(default_factory=list)
    stage0_windows: int = 0
    stage0_queries: int = 0
    stage0_report: dict | None = None
    # prediction log (one entry per consumed window)
    pred_index: list = field(default_factory=list)
    pred_p1: list = field(default_factory=list)
    pred_label: list = field(default_factory=list)
    pred_entropy: list = field(default_factory=list)
    pred_version: list = field(default_factory=list)
    kept_models: list = field(default_factory=list)
    keep_models: bool = False


def new_state(model: Classifier, config: EngineConfig, keep_models: bool = False) -> EngineState:
    ss = np.random.SeedSequence(config.seed)
    buf_ss, sel_ss, train_ss = ss.spawn(3)
    state = EngineState(
        model=model.copy().eval(),
        buffer=ReplayBuffer(config.buffer_capacity, buf_ss, config.eviction),
        config=config,
        select_rng=np.random.default_rng(sel_ss),
        train_rng=np.random.default_rng(train_ss),
        keep_models=keep_models,
    )
    if keep_models:
        state.kept_models.append(state.model.copy())
    return state


def _train(state: EngineState, trigger: int, n_labeled: int, source) -> UpdateRecord:
    cfg = state.config
    snap = state.buffer.snapshot()
    rec = UpdateRecord(trigger, n_labeled, state.buffer.class_counts(), {})
    try:
        model, report = fine_tune(state.model, snap, cfg.train, rng=state.train_rng,
                                  rate_hz=getattr(source, "rate_hz", None))
        state.model = model
        rec.report = report.to_dict()
    except TrainingDivergedError as exc:
        log.warning("update at window %d diverged; keeping previous model", trigger)
        rec.error = str(exc)
        state.incidents.append({"trigger_index": trigger, "error": str(exc)})
    state.model_version += 1
    rec.model_version = state.model_version
    if state.keep_models:
        state.kept_models.append(state.model.copy())
    return rec


def initial_adaptation(state: EngineState, source, n_initial: int,
                       oracle: AnnotationOracle) -> EngineState:
    """Label the first ``n_initial`` windows, fill the buffer and fine-tune once.

    None of this counts toward labeling or update cost.
    """
    source = as_window_source(source)
    q0 = oracle.queries
    entries = []
    for i in range(n_initial):
        w = source.window(i)
        entries.append(BufferEntry(w, oracle.label(w), i))
    if not any(e.label == 1 for e in entries):
        raise InvalidConfigError(
            "initial-adaptation span contains no reference event; the stream must "
            "begin with one"
        )
    state.buffer.extend(entries)
    rec = _train(state, n_initial - 1, 0, source)
    state.stage0_report = asdict(rec)
    state.stage0_windows = n_initial
    state.stage0_queries = oracle.queries - q0
    return state


def _label_and_insert(state: EngineState, indices, source, oracle) -> int:
    n = 0
    for i in sorted(indices):
        if i in state.labeled_set:
            continue
        w = source.window(i)
        state.buffer.insert(BufferEntry(w, oracle.label(w), i))
        state.labeled_set.add(i)
        state.labeled_intervals.append((w.start_time_s, w.end_time_s))
        n += 1
    return n


def _select(state: EngineState, entropy_val: float, label: int) -> str | None:
    cfg = state.config
    s = cfg.strategy
    if s in (EPISMART, NEIGHBORHOOD):
        if label == 1:
            return "predicted_seizure"
        if entropy_val > cfg.tau_E:
            return "entropy"
        return None
    if s == RANDOM_UPDATE_SL and label == 1:
        return "predicted_seizure"
    if s in (RANDOM_UPDATE, RANDOM_UPDATE_SL):
        # draw for every window so the random stream does not depend on predictions
        hit = state.select_rng.random() < cfg.random_rate
        return "random" if hit else None
    return None


def _consume(state: EngineState, i: int, p1: float, label: int, entropy_val: float,
             source, oracle) -> bool:
    """Log one prediction and apply the strategy. Returns True if the model changed."""
    cfg = state.config
    state.pred_index.append(i)
    state.pred_p1.append(p1)
    state.pred_label.append(label)
    state.pred_entropy.append(entropy_val)
    state.pred_version.append(state.model_version)
    s = cfg.strategy
    if s == NO_UPDATE:
        return False

    if s == UPDATE_EVERY_HOUR:
        state.since_update.append(i)
        per = int(round(cfg.update_interval_s / source.stride_s))
        if len(state.since_update) >= per:
            n = _label_and_insert(state, state.since_update, source, oracle)
            state.since_update = []
            state.update_log.append(_train(state, i, n, source))
            return True
        return False

    reason = _select(state, entropy_val, label)
    if reason is not None:
        state.pending.append((i, reason))
        state.pending_neighbors.discard(i)
        state.counter += 1
        start = float(source.start_time(i))
        state.selections.append(Selection(i, reason, start, start + source.duration_s))
        if s == NEIGHBORHOOD:
            half = int(round(cfg.neighborhood_s / 2.0 / source.stride_s))
            counted = {j for j, _ in state.pending}
            for j in range(max(0, i - half), i):
                if j not in counted and j not in state.labeled_set:
                    state.pending_neighbors.add(j)
            state.neighbor_until = max(state.neighbor_until, i + half)
    elif s == NEIGHBORHOOD and i <= state.neighbor_until and i not in state.labeled_set:
        state.pending_neighbors.add(i)

    if state.counter >= cfg.tau_U:
        counted = [j for j, _ in state.pending]
        n = _label_and_insert(state, counted + sorted(state.pending_neighbors), source, oracle)
        state.pending = []
        state.pending_neighbors = set()
        state.counter = 0
        state.update_log.append(_train(state, i, n, source))
        return True
    return False


def step(state: EngineState, w: Window, oracle: AnnotationOracle, source=None) -> EngineState:
    """Advance the engine by one window.

    ``source`` gives access to earlier windows by index (needed by
    ``update_every_hour`` and the neighbourhood variant); it defaults to a
    one-window view when those strategies are not in use.
    """
    if source is None:
        if state.config.strategy in (UPDATE_EVERY_HOUR, NEIGHBORHOOD):
            raise InvalidConfigError(f"{state.config.strategy} needs a window source")
        source = _OneWindow(w)
    state.model.eval()
    _, probs, ent, lab = predict_batch(state.model, np.asarray(w.data)[None])
    _consume(state, w.index, float(probs[0, 1]), int(lab[0]), float(ent[0]), source, oracle)
    return state


@dataclass
class RunResult:
    config: EngineConfig
    indices: np.ndarray
    starts: np.ndarray
    duration_s: float
    p1: np.ndarray
    labels: np.ndarray
    entropy: np.ndarray
    model_version: np.ndarray
    selections: list
    labeled_intervals: list
    update_log: list
    incidents: list
    pending_at_end: int
    stage0_windows: int
    stage0_queries: int
    stage0_report: dict | None
    oracle_queries: int
    stream_duration_s: float
    eval_start_s: float
    final_model: Classifier
    kept_models: list = field(default_factory=list)

    @property
    def n_updates(self) -> int:
        return len(self.update_log)

    @property
    def stream_days(self) -> float:
        return self.stream_duration_s / 86400.0


def n_initial_windows(source, initial_adaptation_s: float) -> int:
    """Number of leading windows that end within the initial-adaptation span."""
    starts = np.asarray(source.starts)
    ends = starts + source.duration_s
    return int(np.searchsorted(ends, source.origin_s + initial_adaptation_s + 1e-9,
                               side="right"))


def run(stream, config: EngineConfig, oracle: AnnotationOracle, model: Classifier,
        keep_models: bool = False) -> RunResult:
    """Initial adaptation (strategy permitting) followed by the streaming loop.

    Windows inside the initial-adaptation span are never part of the
    prediction log, whichever strategy runs, so all strategies are scored on
    the same span.
    """
    source = as_window_source(stream)
    state = new_state(model, config, keep_models)
    n_init = n_initial_windows(source, config.initial_adaptation_s)
    if config.uses_stage0:
        if n_init == 0:
            raise InvalidConfigError("stream too short for initial adaptation")
        initial_adaptation(state, source, n_init, oracle)
    total = len(source)
    i = n_init
    chunk = max(1, config.predict_chunk)
    while i < total:
        j = min(total, i + chunk)
        state.model.eval()
        _, probs, ent, lab = predict_batch(state.model, source.batch(i, j), chunk=chunk)
        nxt = j
        for k in range(i, j):
            if _consume(state, k, float(probs[k - i, 1]), int(lab[k - i]), float(ent[k - i]),
                        source, oracle):
                nxt = k + 1
                break
        i = nxt

    pending_at_end = len(state.pending)
    eval_start = float(source.origin_s + config.initial_adaptation_s)
    idx = np.asarray(state.pred_index, dtype=np.int64)
    starts = np.asarray(source.starts)[idx] if len(idx) else np.zeros(0)
    return RunResult(
        config=config,
        indices=idx,
        starts=starts,
        duration_s=source.duration_s,
        p1=np.asarray(state.pred_p1, dtype=np.float32),
        labels=np.asarray(state.pred_label, dtype=np.int8),
        entropy=np.asarray(state.pred_entropy, dtype=np.float64),
        model_version=np.asarray(state.pred_version, dtype=np.int64),
        selections=state.selections,
        labeled_intervals=state.labeled_intervals,
        update_log=state.update_log,
        incidents=state.incidents,
        pending_at_end=pending_at_end,
        stage0_windows=state.stage0_windows,
        stage0_queries=state.stage0_queries,
        stage0_report=state.stage0_report,
        oracle_queries=oracle.queries,
        stream_duration_s=float(source.total_duration_s),
        eval_start_s=eval_start,
        final_model=state.model,
        kept_models=state.kept_models,
    )


def merge_intervals(pairs):
    out = []
    for s, e in sorted(pairs):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [EventInterval(s, e) for s, e in out]


def selection_rate(result: RunResult) -> float:
    """Counted selections per post-initial window, used to cost-match random strategies."""
    n = len(result.indices)
    return len(result.selections) / n if n else 0.0
