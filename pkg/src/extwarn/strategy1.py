"""Information-gain monitor: per-user shadow trees scored on a validation set."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .collusion import CollusionResult, ExtractionReport, brute_select, greedy_select
from .dataset import Dataset
from .metrics import MetricError, ig_tree, ig_tree_arrays
from .tree import DecisionTree, Prediction, TreeParams, train_arrays

STRATEGY = "ig"


@dataclass(frozen=True)
class QueryRecord:
    seq: int
    x: np.ndarray
    label: str
    leaf_id: int


@dataclass
class UserLog:
    """Append-only query history of one user."""

    user_id: str
    records: list[QueryRecord] = field(default_factory=list)

    def append(self, x, label: str, leaf_id: int) -> QueryRecord:
        rec = QueryRecord(len(self.records) + 1, np.array(x, dtype=float), label, leaf_id)
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)


class IGMonitor:
    """Tracks every user's query/response pairs and scores shadow trees on demand.

    Trees are retrained lazily when a status is requested. ``observe`` may be
    called from several threads; evaluations work on a snapshot of log lengths.
    """

    strategy = STRATEGY

    def __init__(self, source: DecisionTree, validation: Dataset, threshold: float = 50.0,
                 tree_params: TreeParams = TreeParams(), normalize: str = "source",
                 comb_cap: int = 10_000):
        self.source = source
        self.validation = validation
        self.threshold = threshold
        self.tree_params = tree_params
        self.normalize = normalize
        self.comb_cap = comb_cap
        self.logs: dict[str, UserLog] = {}
        self._lock = threading.Lock()
        self._class_index = {c: i for i, c in enumerate(source.classes)}
        if normalize == "entropy":
            counts = np.bincount(validation.y, minlength=len(validation.classes))
            p = counts[counts > 0] / counts.sum()
            self.source_gain = float(-(p * np.log2(p)).sum())
        else:
            self.source_gain = ig_tree(validation, source)
        if self.source_gain <= 0:
            raise MetricError("validation set uninformative: source tree has zero information gain on it")
        self._cache: dict[tuple, float] = {}

    def observe(self, user: str, x, p: Prediction) -> None:
        with self._lock:
            log = self.logs.get(user)
            if log is None:
                log = self.logs[user] = UserLog(user)
            log.append(x, p.label, p.leaf_id)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {u: len(log) for u, log in self.logs.items() if len(log)}

    def _pooled(self, users, lengths) -> tuple[np.ndarray, np.ndarray]:
        recs = [r for u in users for r in self.logs[u].records[:lengths[u]]]
        X = np.array([r.x for r in recs], dtype=float).reshape(len(recs), -1)
        y = np.array([self._class_index[r.label] for r in recs], dtype=np.int64)
        return X, y

    def user_tree(self, users, lengths=None) -> DecisionTree | None:
        """Shadow tree on the pooled queries of ``users``; ``None`` below two observed classes."""
        lengths = lengths or self.snapshot()
        X, y = self._pooled(users, lengths)
        if len(np.unique(y)) < 2:
            return None
        return train_arrays(self.source.schema, self.source.classes, X, y, self.tree_params)

    def pooled_status(self, users, lengths=None) -> float:
        lengths = lengths or self.snapshot()
        users = tuple(sorted(u for u in users if lengths.get(u)))
        key = tuple((u, lengths[u]) for u in users)
        if key in self._cache:
            return self._cache[key]
        tree = self.user_tree(users, lengths) if users else None
        if tree is None:
            status = 0.0
        else:
            status = ig_tree_arrays(self.validation.X, self.validation.y, len(self.validation.classes), tree) \
                / self.source_gain * 100.0
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = status
        return status

    def status_user(self, user: str) -> ExtractionReport:
        lengths = self.snapshot()
        status = self.pooled_status((user,), lengths) if user in lengths else 0.0
        return ExtractionReport(user, STRATEGY, status, lengths.get(user, 0), status > self.threshold,
                                status > 100.0)

    def comb_user_selection(self, k: int) -> CollusionResult:
        lengths = self.snapshot()
        users, status = brute_select(list(lengths), k, lambda c: self.pooled_status(c, lengths), self.comb_cap)
        return CollusionResult(tuple(users), status, "brute", STRATEGY, k)

    def greedy_user_selection(self, k: int) -> CollusionResult:
        lengths = self.snapshot()
        users, status = greedy_select(list(lengths), k, lambda c: self.pooled_status(c, lengths))
        return CollusionResult(users, status, "greedy", STRATEGY, k)
