"""Multichannel sample streams: filtering, windowing, labels, synthesis and file I/O."""

from __future__ import annotations

import bisect
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps

from . import kernels
from .errors import InvalidConfigError, InvalidInputError

log = logging.getLogger(__name__)

AR_COEF = 0.95


@dataclass
class SampleBlock:
    """A contiguous chunk of a stream, stored as ``(channels, samples)``."""

    channels: int
    rate_hz: float
    data: np.ndarray
    start_time_s: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 1:
            if data.size % self.channels:
                raise InvalidInputError("data length not divisible by channel count")
            data = data.reshape(self.channels, -1)
        if data.shape[0] != self.channels:
            raise InvalidInputError(
                f"expected {self.channels} channels, got array of shape {data.shape}"
            )
        if self.rate_hz <= 0:
            raise InvalidInputError("rate_hz must be positive")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("non-finite amplitudes in sample block")
        self.data = data

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.rate_hz

    @property
    def end_time_s(self) -> float:
        return self.start_time_s + self.duration_s


@dataclass
class Window:
    data: np.ndarray
    start_time_s: float
    duration_s: float = 4.0
    index: int = 0

    @property
    def end_time_s(self) -> float:
        return self.start_time_s + self.duration_s


@dataclass(frozen=True, order=True)
class EventInterval:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise InvalidInputError(f"empty interval [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def overlaps(self, other: "EventInterval") -> bool:
        return self.start_s < other.end_s and other.start_s < self.end_s


def check_sorted_disjoint(events: Sequence[EventInterval]) -> None:
    for a, b in zip(events, events[1:]):
        if b.start_s < a.end_s:
            raise InvalidConfigError(f"events {a} and {b} overlap or are unsorted")


# ---------------------------------------------------------------------------
# Butterworth design (bilinear transform) and filtering
# ---------------------------------------------------------------------------


def butter_sos(kind: str, cutoff_hz: float, rate_hz: float, order: int = 4,
               notch_width_hz: float = 2.0) -> np.ndarray:
    """Second-order sections of a digital Butterworth filter.

    ``kind`` is ``"highpass"``, ``"lowpass"`` or ``"notch"``. For a notch the
    result is a band-stop of total ``order`` centred on ``cutoff_hz`` with
    ``notch_width_hz`` between its -3 dB edges.
    """
    nyq = rate_hz / 2.0
    if order < 2 or order % 2:
        raise InvalidConfigError(f"filter order must be even and >= 2, got {order}")
    if kind in ("lowpass", "highpass"):
        if not 0 < cutoff_hz < nyq:
            raise InvalidConfigError(f"cutoff {cutoff_hz} Hz not in (0, Nyquist={nyq})")
        return sps.butter(order, cutoff_hz, btype=kind, fs=rate_hz, output="sos")
    if kind == "notch":
        lo = cutoff_hz - notch_width_hz / 2.0
        hi = cutoff_hz + notch_width_hz / 2.0
        if not (0 < lo and hi < nyq):
            raise InvalidConfigError(
                f"notch band [{lo}, {hi}] Hz not inside (0, Nyquist={nyq})"
            )
        # band-stop design doubles the prototype order
        return sps.butter(order // 2, [lo, hi], btype="bandstop", fs=rate_hz, output="sos")
    raise InvalidConfigError(f"unknown filter kind {kind!r}")


def butterworth_filter(block: SampleBlock, kind: str, cutoff_hz: float, order: int = 4,
                       notch_width_hz: float = 2.0) -> SampleBlock:
    """Causal zero-state Butterworth filtering of every channel."""
    sos = butter_sos(kind, cutoff_hz, block.rate_hz, order, notch_width_hz)
    out = kernels.sosfilt(sos, block.data)
    return SampleBlock(block.channels, block.rate_hz, out, block.start_time_s)


@dataclass
class PreprocessConfig:
    highpass_hz: float = 0.5
    lowpass_hz: float = 60.0
    notch_hz: float = 50.0
    order: int = 4
    lowpass: bool = True
    notch: bool = True


def preprocess(block: SampleBlock, cfg: PreprocessConfig | None = None) -> SampleBlock:
    """Highpass, then lowpass, then notch.

    The lowpass stage needs a sampling rate above twice its cutoff unless it
    is disabled. A notch whose band lies above Nyquist cannot see any signal
    content and is skipped.
    """
    cfg = cfg or PreprocessConfig()
    nyq = block.rate_hz / 2.0
    if cfg.lowpass and cfg.lowpass_hz >= nyq:
        raise InvalidConfigError(
            f"lowpass at {cfg.lowpass_hz} Hz needs rate > {2 * cfg.lowpass_hz} Hz; "
            "disable it for low-rate streams"
        )
    out = butterworth_filter(block, "highpass", cfg.highpass_hz, cfg.order)
    if cfg.lowpass:
        out = butterworth_filter(out, "lowpass", cfg.lowpass_hz, cfg.order)
    if cfg.notch:
        if cfg.notch_hz - 1.0 >= nyq:
            log.debug("notch at %.1f Hz above Nyquist %.1f Hz; skipped", cfg.notch_hz, nyq)
        else:
            out = butterworth_filter(out, "notch", cfg.notch_hz, cfg.order)
    return out


# ---------------------------------------------------------------------------
# Windowing and labels
# ---------------------------------------------------------------------------


def _samples(seconds, rate_hz, what):
    n = seconds * rate_hz
    if abs(n - round(n)) > 1e-9:
        raise InvalidConfigError(f"{what} of {seconds} s is not a whole number of samples")
    return int(round(n))


def windowize(blocks: Iterable[SampleBlock], duration_s: float = 4.0,
              stride_s: float = 1.0) -> Iterator[Window]:
    """Yield fixed-length windows over a contiguous stream of blocks.

    Window ``k`` covers ``[origin + k*stride_s, origin + k*stride_s + duration_s)``
    where ``origin`` is the first block's start time. A trailing partial
    window is discarded.
    """
    carry = None
    origin = None
    rate = None
    win = step = 0
    k = 0
    consumed = 0  # samples dropped from the front of ``carry``
    for block in blocks:
        if origin is None:
            origin = block.start_time_s
            rate = block.rate_hz
            win = _samples(duration_s, rate, "window duration")
            step = _samples(stride_s, rate, "window stride")
            carry = block.data
        else:
            carry = np.concatenate([carry, block.data], axis=1)
        while k * step - consumed + win <= carry.shape[1]:
            i0 = k * step - consumed
            yield Window(
                data=carry[:, i0 : i0 + win].copy(),
                start_time_s=origin + k * stride_s,
                duration_s=duration_s,
                index=k,
            )
            k += 1
        drop = k * step - consumed
        if drop > 0:
            carry = carry[:, drop:]
            consumed += drop


class WindowedStream:
    """Random-access view of the windows of one in-memory stream.

    Equivalent to ``list(windowize([block], ...))`` without materialising the
    overlapping windows.
    """

    def __init__(self, block: SampleBlock, duration_s: float = 4.0, stride_s: float = 1.0,
                 dtype=np.float32):
        self.rate_hz = block.rate_hz
        self.channels = block.channels
        self.duration_s = duration_s
        self.stride_s = stride_s
        self.origin_s = block.start_time_s
        self._win = _samples(duration_s, block.rate_hz, "window duration")
        self._step = _samples(stride_s, block.rate_hz, "window stride")
        self._data = np.ascontiguousarray(block.data, dtype=dtype)
        n = block.n_samples
        self._n = 0 if n < self._win else (n - self._win) // self._step + 1

    def __len__(self):
        return self._n

    @property
    def window_samples(self) -> int:
        return self._win

    @property
    def total_duration_s(self) -> float:
        return self._data.shape[1] / self.rate_hz

    def start_time(self, i):
        return self.origin_s + np.asarray(i) * self.stride_s

    @property
    def starts(self) -> np.ndarray:
        return self.start_time(np.arange(self._n))

    def batch(self, i0: int, i1: int) -> np.ndarray:
        i1 = min(i1, self._n)
        if i1 <= i0:
            return np.empty((0, self.channels, self._win), dtype=self._data.dtype)
        seg = self._data[:, i0 * self._step : (i1 - 1) * self._step + self._win]
        view = sliding_window_view(seg, self._win, axis=1)[:, :: self._step]
        return np.ascontiguousarray(view.transpose(1, 0, 2))

    def take(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        offs = idx[:, None] * self._step + np.arange(self._win)[None, :]
        return np.ascontiguousarray(self._data[:, offs].transpose(1, 0, 2))

    def cut(self, start_s: float):
        """Window data starting at an arbitrary time, or None if out of range."""
        i0 = int(round((start_s - self.origin_s) * self.rate_hz))
        if i0 < 0 or i0 + self._win > self._data.shape[1]:
            return None
        return self._data[:, i0 : i0 + self._win].copy()

    def window(self, i: int) -> Window:
        if not 0 <= i < self._n:
            raise IndexError(i)
        return Window(
            data=self.batch(i, i + 1)[0],
            start_time_s=float(self.start_time(i)),
            duration_s=self.duration_s,
            index=int(i),
        )

    def __getitem__(self, i):
        return self.window(i)

    def __iter__(self):
        for i in range(self._n):
            yield self.window(i)


def window_label(w: Window, reference: Sequence[EventInterval],
                 overlap_fraction: float = 0.0) -> int:
    """1 iff the window overlaps some reference event by more than
    ``overlap_fraction * w.duration_s`` seconds."""
    return int(
        interval_label(w.start_time_s, w.start_time_s + w.duration_s, reference,
                       overlap_fraction * w.duration_s)
    )


def interval_label(start, end, reference, min_overlap_s=0.0):
    starts = [e.start_s for e in reference]
    # only events starting before ``end`` can overlap
    hi = bisect.bisect_left(starts, end)
    for e in reversed(reference[:hi]):
        ov = min(end, e.end_s) - max(start, e.start_s)
        if ov > min_overlap_s:
            return 1
        if e.end_s <= start and ov <= 0:
            # reference is sorted and disjoint: earlier events end earlier
            break
    return 0


def label_windows(starts: np.ndarray, duration_s: float, reference: Sequence[EventInterval],
                  overlap_fraction: float = 0.0) -> np.ndarray:
    """Vectorised :func:`window_label` over many window start times."""
    starts = np.asarray(starts, dtype=np.float64)
    ends = starts + duration_s
    labels = np.zeros(starts.shape, dtype=np.int8)
    thr = overlap_fraction * duration_s
    for e in reference:
        ov = np.minimum(ends, e.end_s) - np.maximum(starts, e.start_s)
        labels |= (ov > thr).astype(np.int8)
    return labels


# ---------------------------------------------------------------------------
# Synthetic streams
# ---------------------------------------------------------------------------


FIRST_EVENT_LIMIT_S = 3600.0


@dataclass
class DriftPoint:
    """From ``time_s`` on, the background uses these gains and noise scale."""

    time_s: float
    gains: tuple
    noise_scale: float = 1.0
    artifact_mean_gap_s: float | None = None


@dataclass
class StreamSpec:
    source: str = "synthetic"
    channels: int = 4
    rate_hz: float = 64.0
    duration_s: float = 48 * 3600.0
    reference_events: list = field(default_factory=list)
    path: str | None = None
    annotations_path: str | None = None
    # synthetic only
    drift: list = field(default_factory=list)
    event_mean_gap_s: float = 4 * 3600.0
    event_duration_s: tuple = (30.0, 90.0)
    event_band_hz: tuple = (4.0, 8.0)
    event_amplitude: float = 3.0
    event_channel_weights: tuple | None = None
    first_event_s: tuple = (300.0, 2400.0)
    artifact_mean_gap_s: float | None = None
    artifact_duration_s: tuple = (8.0, 20.0)
    artifact_band_hz: tuple = (10.0, 14.0)
    artifact_amplitude: float = 3.0
    seed: int | None = None

    def __post_init__(self):
        self.reference_events = [
            e if isinstance(e, EventInterval)
            else EventInterval(**e) if isinstance(e, dict) else EventInterval(*e)
            for e in self.reference_events
        ]
        self.drift = [d if isinstance(d, DriftPoint) else DriftPoint(**d) for d in self.drift]
        self.validate()

    def validate(self):
        if self.source not in ("synthetic", "file"):
            raise InvalidConfigError(f"unknown stream source {self.source!r}")
        if self.channels < 1 or self.rate_hz <= 0 or self.duration_s <= 0:
            raise InvalidConfigError("channels, rate_hz and duration_s must be positive")
        check_sorted_disjoint(self.reference_events)
        if self.reference_events and self.reference_events[0].start_s >= FIRST_EVENT_LIMIT_S:
            raise InvalidConfigError("the first reference event must begin within the first hour")
        times = [d.time_s for d in self.drift]
        if times != sorted(times):
            raise InvalidConfigError("drift schedule must be sorted by time")
        for d in self.drift:
            if len(d.gains) != self.channels:
                raise InvalidConfigError("drift gains must have one entry per channel")
            if d.noise_scale <= 0:
                raise InvalidConfigError("noise_scale must be positive")
        if self.source == "file":
            return
        if not 0 <= self.first_event_s[0] <= self.first_event_s[1] < FIRST_EVENT_LIMIT_S:
            raise InvalidConfigError("first_event_s must lie within the first hour")
        if self.event_amplitude < 3.0:
            raise InvalidConfigError("event amplitude must be at least 3x background RMS")
        lo, hi = self.event_band_hz
        if not 0 < lo <= hi < self.rate_hz / 2:
            raise InvalidConfigError("event band must lie below Nyquist")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reference_events"] = [[e.start_s, e.end_s] for e in self.reference_events]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("event_duration_s", "event_band_hz", "first_event_s",
                  "artifact_duration_s", "artifact_band_hz", "event_channel_weights"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        d["drift"] = [dict(p, gains=tuple(p["gains"])) if isinstance(p, dict) else p
                      for p in d.get("drift", [])]
        return cls(**d)

    def regime_at(self, t: float) -> DriftPoint:
        current = DriftPoint(0.0, tuple([1.0] * self.channels), 1.0, self.artifact_mean_gap_s)
        for d in self.drift:
            if d.time_s <= t:
                current = d
        return current


@dataclass
class SyntheticStream:
    block: SampleBlock
    reference_events: list
    artifacts: list
    spec: StreamSpec

    def blocks(self, block_s: float = 3600.0) -> Iterator[SampleBlock]:
        n = int(round(block_s * self.block.rate_hz))
        for i0 in range(0, self.block.n_samples, n):
            yield SampleBlock(
                self.block.channels,
                self.block.rate_hz,
                self.block.data[:, i0 : i0 + n],
                self.block.start_time_s + i0 / self.block.rate_hz,
            )


def _poisson_intervals(rng, t0, t_end, mean_gap, dur_range, min_sep, taken):
    out = []
    t = t0
    while True:
        t += rng.exponential(mean_gap)
        d = rng.uniform(*dur_range)
        if t + d >= t_end:
            break
        cand = EventInterval(t, t + d)
        padded = EventInterval(t - min_sep, t + d + min_sep)
        if any(padded.overlaps(e) for e in taken):
            continue
        out.append(cand)
        taken.append(cand)
        t += d
    return out


def _burst(n, rate, freq, amp, rng):
    t = np.arange(n) / rate
    taper = min(n // 2, int(rate))  # 1 s raised-cosine edges
    env = np.ones(n)
    if taper > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(taper) / taper)
        env[:taper] = ramp
        env[n - taper :] = ramp[::-1]
    phase = rng.uniform(0, 2 * np.pi)
    return amp * env * np.sin(2 * np.pi * freq * t + phase)


def background_rms(noise_scale: float) -> float:
    """Stationary RMS of the AR(1) background for a given innovation scale."""
    return noise_scale / math.sqrt(1.0 - AR_COEF**2)


def synthesize(spec: StreamSpec, seed: int | None = None) -> SyntheticStream:
    """Generate a drifting multichannel stream with injected oscillatory events.

    Background is per-channel AR(1) noise (coefficient 0.95) whose innovation
    scale and per-channel gain follow ``spec.drift``. Events are tapered
    sinusoidal bursts with a frequency drawn from ``spec.event_band_hz`` and a
    peak amplitude of ``spec.event_amplitude`` times the background RMS.
    Artifacts, when enabled, are bursts of the same kind in
    ``spec.artifact_band_hz`` that are *not* reference events.
    """
    if spec.source != "synthetic":
        raise InvalidConfigError("synthesize() needs a synthetic StreamSpec")
    seed = spec.seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    rng_noise, rng_events, rng_wave = (np.random.default_rng(s) for s in ss.spawn(3))
    rate = spec.rate_hz
    n = int(round(spec.duration_s * rate))
    C = spec.channels

    # piecewise-constant schedule, expanded per sample
    bounds = [0.0] + [d.time_s for d in spec.drift if d.time_s > 0] + [spec.duration_s]
    segments = []
    for t0, t1 in zip(bounds[:-1], bounds[1:]):
        segments.append((int(round(t0 * rate)), int(round(t1 * rate)), spec.regime_at(t0)))

    innov = rng_noise.standard_normal((C, n))
    for i0, i1, reg in segments:
        innov[:, i0:i1] *= reg.noise_scale
    x = kernels.ar1(innov, AR_COEF)
    del innov

    if spec.reference_events:
        events = list(spec.reference_events)
    else:
        events = []
        if spec.event_mean_gap_s and spec.event_mean_gap_s > 0:
            lo, hi = spec.first_event_s
            t_first = rng_events.uniform(lo, hi)
            d = rng_events.uniform(*spec.event_duration_s)
            if t_first + d < spec.duration_s:
                events.append(EventInterval(t_first, t_first + d))
                taken = list(events)
                events += _poisson_intervals(
                    rng_events, t_first + d, spec.duration_s, spec.event_mean_gap_s,
                    spec.event_duration_s, 0.0, taken,
                )
    check_sorted_disjoint(events)
    for e in events:
        if e.end_s > spec.duration_s:
            raise InvalidConfigError(f"event {e} extends past the stream end")

    weights = (np.ones(C) if spec.event_channel_weights is None
               else np.asarray(spec.event_channel_weights, dtype=float))
    for e in events:
        i0, i1 = int(round(e.start_s * rate)), int(round(e.end_s * rate))
        freq = rng_wave.uniform(*spec.event_band_hz)
        amp = spec.event_amplitude * background_rms(spec.regime_at(e.start_s).noise_scale)
        for c in range(C):
            x[c, i0:i1] += weights[c] * _burst(i1 - i0, rate, freq, amp, rng_wave)

    artifacts = []
    taken = list(events)
    for t0, t1 in zip(bounds[:-1], bounds[1:]):
        reg = spec.regime_at(t0)
        gap = reg.artifact_mean_gap_s
        if not gap:
            continue
        found = _poisson_intervals(rng_events, t0, t1, gap, spec.artifact_duration_s,
                                   spec.event_duration_s[1], taken)
        for a in found:
            i0, i1 = int(round(a.start_s * rate)), int(round(a.end_s * rate))
            freq = rng_wave.uniform(*spec.artifact_band_hz)
            amp = spec.artifact_amplitude * background_rms(reg.noise_scale)
            for c in range(C):
                x[c, i0:i1] += _burst(i1 - i0, rate, freq, amp, rng_wave)
        artifacts += found
    artifacts.sort()

    for i0, i1, reg in segments:
        x[:, i0:i1] *= np.asarray(reg.gains, dtype=float)[:, None]
    block = SampleBlock(C, rate, x, 0.0)
    return SyntheticStream(block, events, artifacts, spec)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_BIN_HEADER = struct.Struct("<QQ")


def write_stream(path, block: SampleBlock) -> None:
    """Write ``block`` as ``.csv`` (header ``channels,rate_hz``) or ``.bin``."""
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w") as fh:
            rate = block.rate_hz
            fh.write(f"{block.channels},{int(rate) if float(rate).is_integer() else rate}\n")
            np.savetxt(fh, block.data.T, delimiter=",", fmt="%.9g")
    elif path.suffix == ".bin":
        if not float(block.rate_hz).is_integer():
            raise InvalidConfigError("binary format stores an integer sampling rate")
        with open(path, "wb") as fh:
            fh.write(_BIN_HEADER.pack(block.channels, int(block.rate_hz)))
            fh.write(np.ascontiguousarray(block.data.T, dtype="<f4").tobytes())
    else:
        raise InvalidConfigError(f"unsupported stream extension {path.suffix!r}")


def read_stream(path) -> SampleBlock:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            channels, rate = int(header[0]), float(header[1])
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        if data.size == 0:
            data = np.zeros((0, channels))
        return SampleBlock(channels, rate, data.T.reshape(channels, -1))
    if path.suffix == ".bin":
        raw = path.read_bytes()
        channels, rate = _BIN_HEADER.unpack_from(raw)
        samples = np.frombuffer(raw, dtype="<f4", offset=_BIN_HEADER.size)
        if samples.size % channels:
            raise InvalidInputError("binary stream length not divisible by channel count")
        return SampleBlock(int(channels), float(rate),
                           samples.reshape(-1, channels).T.astype(np.float64))
    raise InvalidConfigError(f"unsupported stream extension {path.suffix!r}")


def write_annotations(path, events: Sequence[EventInterval]) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(f"{e.start_s!r}\t{e.end_s!r}\n")


def read_annotations(path) -> list:
    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            start, end = line.split("\t")[:2]
            events.append(EventInterval(float(start), float(end)))
    check_sorted_disjoint(events)
    return events


def load_stream(spec: StreamSpec, seed: int | None = None):
    """Return ``(block, reference_events)`` for either kind of stream source."""
    if spec.source == "synthetic":
        syn = synthesize(spec, seed)
        return syn.block, syn.reference_events
    block = read_stream(spec.path)
    events = (read_annotations(spec.annotations_path) if spec.annotations_path
              else list(spec.reference_events))
    return block, events
