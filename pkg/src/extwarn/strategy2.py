"""Compact-summary monitor: per-user, per-leaf bounding boxes and their coverage."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass

import numpy as np

from .collusion import CollusionResult, ExtractionReport, brute_select, greedy_select
from .dataset import ClassStats, Dataset, class_stats
from .tree import DecisionTree, Prediction

STRATEGY = "summary"


class SummaryError(ValueError):
    pass


@dataclass(eq=False)
class ModelSummary:
    """``lo``/``hi`` are (leaves, continuous features); ``hit`` marks rows ever queried."""

    user_id: str
    lo: np.ndarray
    hi: np.ndarray
    hit: np.ndarray
    query_count: int = 0

    @classmethod
    def empty(cls, user_id: str, n_leaves: int, n_features: int) -> "ModelSummary":
        return cls(user_id, np.zeros((n_leaves, n_features)), np.zeros((n_leaves, n_features)),
                   np.zeros(n_leaves, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.lo.shape

    def copy(self) -> "ModelSummary":
        return ModelSummary(self.user_id, self.lo.copy(), self.hi.copy(), self.hit.copy(), self.query_count)

    def update(self, leaf_id: int, point: np.ndarray) -> None:
        if not 0 <= leaf_id < len(self.hit):
            raise SummaryError(f"leaf id {leaf_id} out of range")
        if self.hit[leaf_id]:
            np.minimum(self.lo[leaf_id], point, out=self.lo[leaf_id])
            np.maximum(self.hi[leaf_id], point, out=self.hi[leaf_id])
        else:
            self.lo[leaf_id] = point
            self.hi[leaf_id] = point
            self.hit[leaf_id] = True
        self.query_count += 1

    def leaf_volumes(self) -> np.ndarray:
        return np.where(self.hit, np.prod(np.abs(self.hi - self.lo), axis=1), 0.0)

    def leaf_volume(self, leaf_id: int) -> float:
        return float(self.leaf_volumes()[leaf_id])

    def __eq__(self, other):
        if not isinstance(other, ModelSummary):
            return NotImplemented
        if self.shape != other.shape or not np.array_equal(self.hit, other.hit):
            return False
        h = self.hit
        return bool(np.array_equal(self.lo[h], other.lo[h]) and np.array_equal(self.hi[h], other.hi[h]))

    def to_json(self, feature_names=None) -> dict:
        names = feature_names or [str(j) for j in range(self.shape[1])]
        boxes = {
            str(i): {names[j]: [float(self.lo[i, j]), float(self.hi[i, j])] for j in range(self.shape[1])}
            for i in np.flatnonzero(self.hit)
        }
        return {"user_id": self.user_id, "leaf_boxes": boxes}


def combine_summaries(a: ModelSummary, b: ModelSummary, user_id: str | None = None) -> ModelSummary:
    """Box-wise union: the summary one user would hold after both query streams."""
    if a.shape != b.shape:
        raise SummaryError(f"summary shapes differ: {a.shape} vs {b.shape}")
    both = a.hit & b.hit
    lo = np.where(a.hit[:, None], a.lo, b.lo)
    hi = np.where(a.hit[:, None], a.hi, b.hi)
    lo[both] = np.minimum(a.lo[both], b.lo[both])
    hi[both] = np.maximum(a.hi[both], b.hi[both])
    hit = a.hit | b.hit
    lo[~hit] = 0.0
    hi[~hit] = 0.0
    uid = user_id if user_id is not None else "+".join(u for u in (a.user_id, b.user_id) if u)
    return ModelSummary(uid, lo, hi, hit, a.query_count + b.query_count)


class SummaryMonitor:
    """Maintains a model summary per user against a continuous-feature source tree."""

    strategy = STRATEGY

    def __init__(self, source: DecisionTree, stats: ClassStats, threshold: float = 50.0,
                 comb_cap: int = 10_000):
        if not source.schema.all_continuous:
            raise SummaryError("summary monitor needs an all-continuous schema; use the information-gain monitor")
        self.source = source
        self.stats = stats
        self.threshold = threshold
        self.comb_cap = comb_cap
        self.summaries: dict[str, ModelSummary] = {}
        self._lock = threading.Lock()
        self._continuous = source.schema.continuous_indices
        labels = source.leaf_labels
        self._leaf_class = np.array([source.classes.index(l) for l in labels], dtype=np.int64)
        vols = np.array([stats.volumes.get(c, 0.0) for c in source.classes])
        present = np.bincount(self._leaf_class, minlength=len(source.classes)) > 0
        for c, v, p in zip(source.classes, vols, present):
            if p and v <= 0:
                raise SummaryError(f"class {c!r} has zero volume in the source tree")
        self._class_vol = np.where(present, vols, 1.0)
        self._class_p = np.array([stats.probs.get(c, 0.0) for c in source.classes])

    @classmethod
    def from_training(cls, source: DecisionTree, train: Dataset, threshold: float = 50.0) -> "SummaryMonitor":
        return cls(source, class_stats(train, source), threshold)

    def _empty(self, user: str) -> ModelSummary:
        return ModelSummary.empty(user, self.source.leaf_count, len(self._continuous))

    def update_summary(self, user: str, x, p: Prediction) -> None:
        point = np.asarray(x, dtype=float)[self._continuous]
        with self._lock:
            s = self.summaries.get(user)
            if s is None:
                s = self.summaries[user] = self._empty(user)
            s.update(p.leaf_id, point)

    observe = update_summary

    def snapshot(self) -> dict[str, ModelSummary]:
        with self._lock:
            return {u: s.copy() for u, s in self.summaries.items() if s.query_count}

    def summary_status(self, s: ModelSummary | None) -> float:
        """Probability-weighted covered fraction of every class volume, in percent."""
        if s is None:
            return 0.0
        covered = np.bincount(self._leaf_class, weights=s.leaf_volumes(), minlength=len(self._class_vol))
        return float((self._class_p * covered / self._class_vol).sum() * 100.0)

    def per_class(self, s: ModelSummary) -> dict[str, float]:
        covered = np.bincount(self._leaf_class, weights=s.leaf_volumes(), minlength=len(self._class_vol))
        return {c: float(v) for c, v in zip(self.source.classes, covered / self._class_vol)}

    def status_user(self, user: str) -> ExtractionReport:
        with self._lock:
            s = self.summaries.get(user)
            s = s.copy() if s is not None else None
        status = self.summary_status(s)
        return ExtractionReport(user, STRATEGY, status, s.query_count if s else 0, status > self.threshold)

    def combined(self, users, snap=None) -> ModelSummary | None:
        snap = snap if snap is not None else self.snapshot()
        out = None
        for u in sorted(users):
            if u in snap:
                out = snap[u] if out is None else combine_summaries(out, snap[u])
        return out

    def pooled_status(self, users, snap=None) -> float:
        return self.summary_status(self.combined(users, snap))

    def comb_user_selection(self, k: int) -> CollusionResult:
        snap = self.snapshot()
        users, status = brute_select(list(snap), k, lambda c: self.pooled_status(c, snap), self.comb_cap)
        return CollusionResult(tuple(users), status, "brute", STRATEGY, k)

    def greedy_user_selection_vol(self, k: int) -> CollusionResult:
        snap = self.snapshot()
        users, status = greedy_select(list(snap), k, lambda c: self.pooled_status(c, snap))
        return CollusionResult(users, status, "greedy", STRATEGY, k)

    greedy_user_selection = greedy_user_selection_vol

    def dump(self) -> list[dict]:
        names = [self.source.schema[j].name for j in self._continuous]
        return [s.to_json(names) for _, s in sorted(self.snapshot().items())]

    def dumps(self) -> str:
        return "".join(json.dumps(d, sort_keys=True) + "\n" for d in self.dump())


def leaf_volume(s: ModelSummary, leaf_id: int) -> float:
    return s.leaf_volume(leaf_id)
