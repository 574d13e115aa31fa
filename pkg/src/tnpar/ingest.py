"""Event records, binning into count tensors, and sliding history windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np


class EventRecord(NamedTuple):
    event_type: int
    node: int
    timestamp: float


@dataclass(frozen=True)
class CountTensor:
    """Occurrence counts, ``counts[t, v, n]`` for 0-based bin ``t`` covering
    ``(t*delta, (t+1)*delta]``."""

    counts: np.ndarray  # (bins, V, N) int
    delta: float

    @property
    def bin_count(self) -> int:
        return self.counts.shape[0]

    @property
    def type_count(self) -> int:
        return self.counts.shape[1]

    @property
    def node_count(self) -> int:
        return self.counts.shape[2]


class WindowSample(NamedTuple):
    target: np.ndarray   # (V, N) counts at bin t
    history: np.ndarray  # (omega, V, N); history[0] is bin t-1
    t_index: int         # 0-based bin index


def bin_index(timestamp: float, delta: float) -> int:
    """0-based bin of a timestamp; t=0 is folded into the first bin."""
    return max(math.ceil(timestamp / delta), 1) - 1


def discretize(events, delta: float, horizon: float, type_count: int, node_count: int) -> CountTensor:
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    bins = max(math.ceil(horizon / delta), 1)
    counts = np.zeros((bins, type_count, node_count), dtype=np.int64)
    for idx, ev in enumerate(events):
        v, n, ts = ev
        if not (0 <= v < type_count):
            raise ValueError(f"record {idx} {tuple(ev)}: event_type out of range [0, {type_count})")
        if not (0 <= n < node_count):
            raise ValueError(f"record {idx} {tuple(ev)}: node out of range [0, {node_count})")
        if not (0 <= ts <= horizon):
            raise ValueError(f"record {idx} {tuple(ev)}: timestamp outside [0, {horizon}]")
        counts[bin_index(ts, delta), v, n] += 1
    return CountTensor(counts, float(delta))


def make_windows(tensor: CountTensor, omega: int) -> Iterator[WindowSample]:
    if omega < 1:
        raise ValueError(f"omega must be >= 1, got {omega}")
    padded = _pad_history(tensor.counts, omega)
    for t in range(tensor.bin_count):
        # padded[t + omega] is bin t; history runs backwards from bin t-1
        hist = padded[t:t + omega][::-1]
        yield WindowSample(tensor.counts[t], hist.copy(), t)


def _pad_history(counts: np.ndarray, omega: int) -> np.ndarray:
    pad = np.zeros((omega,) + counts.shape[1:], dtype=counts.dtype)
    return np.concatenate([pad, counts], axis=0)


def merge_nodes(tensor: CountTensor) -> CountTensor:
    return CountTensor(tensor.counts.sum(axis=2, keepdims=True), tensor.delta)


# -- file format ----------------------------------------------------------------------


def write_events_csv(events, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["event_type", "node", "timestamp"])
        for v, n, ts in events:
            writer.writerow([v, n, repr(float(ts))])


def read_events_csv(path) -> list[EventRecord]:
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["event_type", "node", "timestamp"]:
            raise ValueError(f"{path}: line 1: expected header 'event_type,node,timestamp', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                v, n, ts = row
                rec = EventRecord(int(v), int(n), float(ts))
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: malformed event row {row}") from None
            if rec.event_type < 0 or rec.node < 0 or not (rec.timestamp >= 0 and math.isfinite(rec.timestamp)):
                raise ValueError(f"{path}: line {lineno}: negative or non-finite value in {row}")
            events.append(rec)
    return events
