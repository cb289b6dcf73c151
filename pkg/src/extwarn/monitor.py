"""Checkpointed warning loop over one or both monitors.

Event timestamps are logical: the number of queries observed when the
checkpoint ran. That keeps offline replays and the live service byte-identical.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

from .collusion import CollusionResult
from .tree import Prediction


@dataclass(frozen=True)
class WarningEvent:
    ts: int
    strategy: str
    users: tuple[str, ...]
    status: float
    k: int
    threshold: float
    first: bool = False

    def to_json(self) -> dict:
        return {"ts": self.ts, "strategy": self.strategy, "users": list(self.users), "status": self.status,
                "k": self.k, "threshold": self.threshold, "first": self.first}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _collude(monitor, k: int) -> CollusionResult:
    return monitor.greedy_user_selection(k)


def extraction_warning_loop(monitor, stream: Iterable[tuple[str, object, Prediction]], k: int, p: float,
                            every: int | None = 50, seconds: float | None = None,
                            clock: Callable[[], float] = time.monotonic) -> Iterator[WarningEvent]:
    """Feed ``(user, x, prediction)`` triples to ``monitor`` and yield warnings.

    At every interval boundary (``every`` queries, or ``seconds`` elapsed on
    ``clock``) the greedy k-user selection runs; an event is emitted whenever
    its status is at least ``p``. Monitoring continues after a warning; the
    first event carries ``first=True``.
    """
    if p <= 0:
        raise ValueError("threshold p must be positive")
    if (every is None) == (seconds is None):
        raise ValueError("give exactly one of every= or seconds=")
    count = 0
    fired = False
    last = clock()
    for user, x, pred in stream:
        monitor.observe(user, x, pred)
        count += 1
        if every is not None:
            due = count % every == 0
        else:
            now = clock()
            due = now - last >= seconds
            if due:
                last = now
        if not due:
            continue
        res = _collude(monitor, k)
        if res.status >= p:
            yield WarningEvent(count, monitor.strategy, res.users, res.status, k, p, first=not fired)
            fired = True


class ExtractionMonitor:
    """Drives any subset of {ig, summary} monitors with shared checkpoints.

    ``observe`` is safe to call concurrently; checkpoints are serialized.
    """

    def __init__(self, monitors: Iterable, k_list=(1,), threshold: float = 50.0, every: int | None = None):
        self.monitors = {m.strategy: m for m in monitors}
        if not self.monitors:
            raise ValueError("at least one monitor is required")
        self.k_list = tuple(k_list)
        self.threshold = threshold
        self.every = every
        self.query_count = 0
        self.events: list[WarningEvent] = []
        self._fired: set[tuple[str, int]] = set()
        self._lock = threading.Lock()
        self._eval_lock = threading.Lock()

    def observe(self, user: str, x, pred: Prediction) -> list[WarningEvent]:
        with self._lock:
            for m in self.monitors.values():
                m.observe(user, x, pred)
            self.query_count += 1
            due = self.every is not None and self.query_count % self.every == 0
            ts = self.query_count
            if due:
                # hold the observation lock so the checkpoint sees exactly ts queries
                return self.checkpoint(ts)[1]
        return []

    def collusion(self, k: int) -> dict[str, CollusionResult]:
        with self._eval_lock:
            return {s: _collude(m, k) for s, m in self.monitors.items()}

    def checkpoint(self, ts: int | None = None) -> tuple[dict[tuple[str, int], CollusionResult], list[WarningEvent]]:
        ts = self.query_count if ts is None else ts
        results, events = {}, []
        with self._eval_lock:
            for strategy, m in self.monitors.items():
                for k in self.k_list:
                    res = _collude(m, k)
                    results[(strategy, k)] = res
                    if res.status >= self.threshold:
                        first = (strategy, k) not in self._fired
                        self._fired.add((strategy, k))
                        events.append(WarningEvent(ts, strategy, res.users, res.status, k, self.threshold, first))
            self.events.extend(events)
        return results, events
