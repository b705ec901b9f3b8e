"""Fixed-capacity replay buffer with a seizure-first retention policy.

Half of the capacity is nominally reserved for each class. While seizure
entries are scarce, non-seizure entries use the slack. When the buffer is
full, a new entry displaces a uniformly random non-seizure entry; seizure
entries are only evicted once nothing else is left. ``eviction="oldest"``
swaps the random pick for the earliest-inserted entry of the same class, for
sensitivity checks against the uniform default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError
from .signal import Window


@dataclass
class BufferEntry:
    window: Window
    label: int
    insert_step: int = -1


EVICTION_POLICIES = ("uniform", "oldest")


class ReplayBuffer:
    def __init__(self, capacity: int = 3600, seed=None, eviction: str = "uniform"):
        if capacity < 1:
            raise InvalidConfigError("buffer capacity must be >= 1")
        if eviction not in EVICTION_POLICIES:
            raise InvalidConfigError(
                f"unknown eviction policy {eviction!r}; expected one of {EVICTION_POLICIES}")
        self.capacity = int(capacity)
        self.eviction = eviction
        self.rng = np.random.default_rng(seed)
        self._parts: dict[int, list] = {0: [], 1: []}
        self._steps = 0

    @property
    def seizure_quota(self) -> int:
        return self.capacity // 2

    def __len__(self):
        return len(self._parts[0]) + len(self._parts[1])

    def _evict_from(self, label):
        part = self._parts[label]
        if self.eviction == "oldest":
            j = min(range(len(part)), key=lambda i: part[i].insert_step)
        else:
            j = int(self.rng.integers(len(part)))
        # swap-remove keeps eviction O(1); snapshot() restores insertion order
        part[j], part[-1] = part[-1], part[j]
        return part.pop()

    def insert(self, entry: BufferEntry) -> list:
        """Store ``entry`` and return the list of entries evicted to make room."""
        if entry.label not in (0, 1):
            raise InvalidConfigError(f"buffer entries need a 0/1 label, got {entry.label!r}")
        if entry.insert_step < 0:
            entry.insert_step = self._steps
        self._steps += 1
        evicted = []
        if len(self) >= self.capacity:
            if self._parts[0]:
                evicted.append(self._evict_from(0))
            else:
                # buffer holds seizure entries only
                evicted.append(self._evict_from(1))
        self._parts[entry.label].append(entry)
        return evicted

    def extend(self, entries) -> list:
        evicted = []
        for e in entries:
            evicted += self.insert(e)
        return evicted

    def snapshot(self) -> list:
        entries = self._parts[0] + self._parts[1]
        return sorted(entries, key=lambda e: e.insert_step)

    def class_counts(self) -> tuple:
        return len(self._parts[0]), len(self._parts[1])

    def dump_jsonl(self, path_or_fh, include_data: bool = False) -> None:
        """One JSON object per entry (``insert_step``, ``label``, ``start_time_s``)."""
        own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
        fh = open(path_or_fh, "w") if own else path_or_fh
        try:
            for e in self.snapshot():
                rec = {
                    "insert_step": e.insert_step,
                    "label": e.label,
                    "start_time_s": e.window.start_time_s,
                }
                if include_data:
                    rec["data"] = np.asarray(e.window.data).tolist()
                fh.write(json.dumps(rec) + "\n")
        finally:
            if own:
                fh.close()


def insert(b: ReplayBuffer, e: BufferEntry) -> list:
    return b.insert(e)


def snapshot(b: ReplayBuffer) -> list:
    return b.snapshot()


def class_counts(b: ReplayBuffer) -> tuple:
    return b.class_counts()
