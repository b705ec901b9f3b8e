"""Fine-tuning from buffer contents: class balancing, Adam, early stopping and
reduce-on-plateau learning-rate decay."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidConfigError, TrainingDivergedError
from .model import Classifier, _log_softmax

log = logging.getLogger(__name__)

SHIFT_STEP_S = 0.125
N_SHIFTS = 7


@dataclass
class TrainConfig:
    max_epochs: int = 100
    early_stop_patience: int = 15
    lr0: float = 1e-4
    plateau_patience: int = 10
    lr_factor: float = 10.0
    batch_size: int = 32
    val_fraction: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise InvalidConfigError("val_fraction must lie in (0, 1)")
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise InvalidConfigError("patience values must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1 or self.lr_factor <= 1:
            raise InvalidConfigError("invalid max_epochs, batch_size or lr_factor")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    epochs_run: int = 0
    best_epoch: int = -1
    best_val_loss: float = float("nan")
    final_lr: float = float("nan")
    lr_history: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    wall_time_s: float = 0.0
    n_train: int = 0
    n_val: int = 0
    skipped: bool = False
    augment_warning: bool = False

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def _shift_samples(k, rate_hz):
    return int(round(k * SHIFT_STEP_S * rate_hz))


def balance_arrays(x, y, rate_hz, source=None, starts=None):
    """Grow the seizure class of ``(x, y)`` until it matches the other class.

    Seizure windows get copies shifted by ``k * 0.125 s`` for ``k = 1..7``
    (pass over all windows for each ``k`` in turn), then plain repeats once
    the shifts are used up. With ``source`` (a :class:`WindowedStream`) and
    ``starts`` the shifted copies are cut from the raw stream; otherwise the
    window is rotated circularly. Returns ``(x, y, warning)``.
    """
    y = np.asarray(y)
    pos = np.flatnonzero(y == 1)
    n_neg = int((y == 0).sum())
    if len(pos) == 0 or n_neg == 0:
        return x, y, True
    need = n_neg - len(pos)
    if need <= 0:
        return x, y, False
    extra = []
    for k in range(1, N_SHIFTS + 1):
        shift = _shift_samples(k, rate_hz)
        for i in pos:
            if len(extra) >= need:
                break
            if source is not None and starts is not None:
                cut = source.cut(starts[i] + k * SHIFT_STEP_S)
                extra.append(cut if cut is not None else np.roll(x[i], -shift, axis=-1))
            else:
                extra.append(np.roll(x[i], -shift, axis=-1))
        if len(extra) >= need:
            break
    j = 0
    while len(extra) < need:
        extra.append(x[pos[j % len(pos)]])
        j += 1
    x_new = np.concatenate([x, np.stack(extra).astype(x.dtype)])
    y_new = np.concatenate([y, np.ones(len(extra), dtype=y.dtype)])
    return x_new, y_new, False


def augment(entries, rate_hz: float, source=None):
    """Balance a list of :class:`BufferEntry` by shifted/repeated seizure copies.

    Returns ``(entries, warning)``; ``warning`` is set when one class is
    absent, in which case the list comes back unchanged. New entries reuse
    the label and insert step of the entry they were derived from.
    """
    from .buffer import BufferEntry
    from .signal import Window

    entries = list(entries)
    if not entries:
        return entries, True
    x = np.stack([e.window.data for e in entries])
    y = np.array([e.label for e in entries])
    starts = np.array([e.window.start_time_s for e in entries])
    x_new, y_new, warn = balance_arrays(x, y, rate_hz, source, starts)
    if warn or len(y_new) == len(y):
        return entries, warn
    pos = [e for e in entries if e.label == 1]
    out = list(entries)
    for j, data in enumerate(x_new[len(y):]):
        parent = pos[j % len(pos)]
        w = parent.window
        out.append(BufferEntry(Window(data, w.start_time_s, w.duration_s, w.index), 1,
                               parent.insert_step))
    return out, False


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def stratified_split(y, val_fraction, rng):
    """Indices ``(train, val)`` with each class split in proportion.

    Every class keeps at least one training example.
    """
    y = np.asarray(y)
    train, val = [], []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        n_val = min(int(round(len(idx) * val_fraction)), len(idx) - 1)
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def evaluate_loss(c: Classifier, x, y, chunk=1024) -> float:
    c.eval()
    total = 0.0
    for i in range(0, len(y), chunk):
        logp = _log_softmax(c.logits(x[i : i + chunk]))
        total += -logp[np.arange(len(logp)), y[i : i + chunk]].sum()
    return float(total / len(y))


def train_arrays(c: Classifier, x, y, cfg: TrainConfig, rate_hz: float, rng=None,
                 source=None, starts=None):
    """Core loop behind :func:`fine_tune` operating on stacked arrays.

    The input classifier is never modified. Raises
    :class:`TrainingDivergedError` if the loss becomes non-finite.
    """
    t_start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    y = np.asarray(y, dtype=np.int64)
    report = TrainReport()
    if len(y) == 0 or len(np.unique(y)) < 2:
        report.skipped = True
        report.augment_warning = True
        report.final_lr = cfg.lr0
        return c.copy(), report

    tr, va = stratified_split(y, cfg.val_fraction, rng)
    if len(va) == 0:
        va = tr
    x_tr, y_tr, warn = balance_arrays(
        x[tr], y[tr], rate_hz, source, None if starts is None else np.asarray(starts)[tr]
    )
    x_va, y_va = x[va], y[va]
    report.augment_warning = warn
    report.n_train, report.n_val = len(y_tr), len(y_va)

    model = c.copy()
    opt = Adam(model.params, cfg.lr0, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best = math.inf
    best_state = model.state()
    since_best = 0
    plateau = 0
    n = len(y_tr)
    for epoch in range(cfg.max_epochs):
        model.train()
        perm = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            bi = perm[i : i + cfg.batch_size]
            loss, grads = model.loss_and_grad(x_tr[bi], y_tr[bi])
            opt.step(model.params, grads)
            losses.append(loss * len(bi))
        report.train_loss.append(float(sum(losses) / n))
        report.lr_history.append(opt.lr)
        val = evaluate_loss(model, x_va, y_va)
        if not math.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        report.val_loss.append(val)
        report.epochs_run = epoch + 1
        if val < best:
            best = val
            best_state = model.state()
            report.best_epoch = epoch
            since_best = 0
            plateau = 0
        else:
            since_best += 1
            plateau += 1
            if since_best >= cfg.early_stop_patience:
                break
            if plateau >= cfg.plateau_patience:
                opt.lr /= cfg.lr_factor
                plateau = 0
    model.load_state(best_state)
    model.eval()
    report.best_val_loss = float(best)
    report.final_lr = opt.lr
    report.wall_time_s = time.perf_counter() - t_start
    return model, report


def fine_tune(c: Classifier, entries, cfg: TrainConfig, rng=None, rate_hz: float | None = None,
              source=None):
    """Fine-tune a copy of ``c`` on buffer entries; returns ``(model, report)``.

    Entries holding a single class produce a skipped report and an unchanged
    copy of the model. ``rate_hz`` (needed for the 1/8 s shifts) is inferred
    from the window length when omitted.
    """
    entries = list(entries)
    if not entries:
        report = TrainReport(skipped=True, augment_warning=True, final_lr=cfg.lr0)
        return c.copy(), report
    x = np.stack([e.window.data for e in entries]).astype(c.dtype, copy=False)
    y = np.array([e.label for e in entries], dtype=np.int64)
    starts = np.array([e.window.start_time_s for e in entries])
    if rate_hz is None:
        rate_hz = x.shape[-1] / entries[0].window.duration_s
    return train_arrays(c, x, y, cfg, rate_hz, rng, source, starts)
