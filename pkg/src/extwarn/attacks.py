"""Simulated adversaries against a prediction endpoint.

An oracle is any callable mapping an encoded feature vector to a
:class:`~extwarn.tree.Prediction`. Each attack exposes ``steps()``, a generator
that issues one query per item, so several adversaries can be interleaved.
"""

from __future__ import annotations

import bisect
import csv
import itertools
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .dataset import Schema, sample_uniform
from .tree import Prediction, TreeParams, train_arrays

Oracle = Callable[[np.ndarray], Prediction]


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackBudget:
    max_queries: int | None = 1000
    seed: int = 0
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.max_queries is not None and self.max_queries < 0:
            raise AttackError("max_queries must be >= 0")
        if self.checkpoint_every < 1:
            raise AttackError("checkpoint_every must be >= 1")


@dataclass(frozen=True)
class RecoveredLeaf:
    box: np.ndarray
    label: str


@dataclass
class RecoveredRuleSet:
    leaves: dict[int, RecoveredLeaf] = field(default_factory=dict)

    def __len__(self):
        return len(self.leaves)

    def copy(self) -> "RecoveredRuleSet":
        return RecoveredRuleSet(dict(self.leaves))

    def merge(self, other: "RecoveredRuleSet") -> "RecoveredRuleSet":
        out = dict(other.leaves)
        out.update(self.leaves)
        return RecoveredRuleSet(out)


class ConstantClassifier:
    def __init__(self, label: str):
        self.label = label

    def predict_labels(self, X) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), self.label, dtype=object)


class NullClassifier:
    """Stands in for an adversary that has not observed anything yet; never agrees."""

    def predict_labels(self, X) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), None, dtype=object)


class RuleSetClassifier:
    """Box-membership classifier with nearest-box fallback.

    Membership is closed below and open above. Points outside every box take
    the label of the nearest box in L-infinity distance, lowest leaf id first.
    """

    def __init__(self, rules: RecoveredRuleSet):
        if not len(rules):
            raise AttackError("cannot build a classifier from an empty rule set")
        ids = sorted(rules.leaves)
        self.leaf_ids = ids
        self.boxes = np.stack([rules.leaves[i].box for i in ids])
        self.labels = np.array([rules.leaves[i].label for i in ids], dtype=object)

    def predict_labels(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo, hi = self.boxes[None, :, :, 0], self.boxes[None, :, :, 1]
        x = X[:, None, :]
        inside = np.all((lo <= x) & (x < hi), axis=2)
        gap = np.maximum(np.maximum(lo - x, x - hi), 0.0).max(axis=2)
        pick = np.where(inside.any(axis=1), inside.argmax(axis=1), gap.argmin(axis=1))
        return self.labels[pick]


def surrogate_from_rules(rules: RecoveredRuleSet, schema: Schema | None = None) -> RuleSetClassifier:
    return RuleSetClassifier(rules)


@dataclass
class AttackRun:
    queries: list[tuple[np.ndarray, Prediction]]
    checkpoints: list[tuple[int, object]]


class RandomAttack:
    """Uniform random queries; the surrogate is a tree trained on everything seen."""

    kind = "random"

    def __init__(self, oracle: Oracle, schema: Schema, seed: int = 0, params: TreeParams = TreeParams()):
        self.oracle = oracle
        self.schema = schema
        self.seed = seed
        self.params = params
        self.X: list[np.ndarray] = []
        self.labels: list[str] = []

    def steps(self) -> Iterator[tuple[np.ndarray, Prediction]]:
        rng = np.random.default_rng(self.seed)
        while True:
            x = sample_uniform(self.schema, 1, rng)[0]
            pred = self.oracle(x)
            self.X.append(x)
            self.labels.append(pred.label)
            yield x, pred

    def surrogate(self):
        if not self.labels:
            return NullClassifier()
        classes = sorted(set(self.labels))
        index = {c: i for i, c in enumerate(classes)}
        return train_arrays(self.schema, classes, np.array(self.X), np.array([index[l] for l in self.labels]),
                            self.params)


class PathfindingAttack:
    """Leaf-id driven rule recovery.

    From a witness point of an unexplored leaf, each axis is searched in both
    directions (doubling, then bisection to ``eps``) until the returned leaf id
    changes. That pins the leaf's box on the axis and yields a witness of the
    neighbouring leaf, which joins the frontier. When the frontier empties, the
    centre of any part of the space not yet covered by a recovered box is
    probed, so leaves not adjacent to a search line are still found.
    """

    kind = "pathfinding"

    def __init__(self, oracle: Oracle, schema: Schema, seed: int = 0, eps: float = 1e-6,
                 initial_step: float = 1 / 32):
        if not schema.all_continuous:
            raise AttackError("path-finding attack needs an all-continuous schema")
        if eps <= 0:
            raise AttackError("eps must be positive")
        self.oracle = oracle
        self.schema = schema
        self.seed = seed
        self.bounds = schema.continuous_bounds()
        span = self.bounds[:, 1] - self.bounds[:, 0]
        self.eps = eps * span
        self.step0 = initial_step * span
        self.rules = RecoveredRuleSet()
        self.done = False
        self.n_queries = 0
        self._label_counts: Counter = Counter()
        self._cuts: list[list[float]] = [[] for _ in range(len(schema))]
        self.X: list[np.ndarray] = []
        self.labels: list[str] = []

    def _query(self, x: np.ndarray):
        pred = self.oracle(x)
        self.n_queries += 1
        self.X.append(x)
        self.labels.append(pred.label)
        self._label_counts[pred.label] += 1
        yield x, pred
        return pred

    def _snap(self, j: int, value: float) -> float:
        cuts = self._cuts[j]
        i = bisect.bisect_left(cuts, value)
        for c in cuts[max(i - 1, 0):i + 1]:
            if abs(c - value) <= 2 * self.eps[j]:
                return c
        cuts.insert(i, value)
        return value

    def _search(self, w: np.ndarray, leaf: int, j: int, direction: int):
        limit = self.bounds[j, 1] if direction > 0 else self.bounds[j, 0]
        inside = w[j]
        if inside == limit:
            return limit, None, None
        step = self.step0[j]
        while True:
            cand = inside + direction * step
            if direction * (cand - limit) >= 0:
                cand = limit
            x = w.copy()
            x[j] = cand
            pred = yield from self._query(x)
            if pred.leaf_id != leaf:
                outside, out_x, out_pred = cand, x, pred
                break
            inside = cand
            if cand == limit:
                return limit, None, None
            step *= 2
        while abs(outside - inside) > self.eps[j]:
            mid = (inside + outside) / 2
            x = w.copy()
            x[j] = mid
            pred = yield from self._query(x)
            if pred.leaf_id == leaf:
                inside = mid
            else:
                outside, out_x, out_pred = mid, x, pred
        return self._snap(j, (inside + outside) / 2), out_x, out_pred

    def _recover(self, w: np.ndarray, pred: Prediction, frontier: deque, queued: set):
        box = np.empty((len(self.schema), 2))
        for j in range(len(self.schema)):
            for side, direction in ((0, -1), (1, 1)):
                bound, nb_x, nb_pred = yield from self._search(w, pred.leaf_id, j, direction)
                box[j, side] = bound
                if nb_pred is not None and nb_pred.leaf_id not in queued:
                    queued.add(nb_pred.leaf_id)
                    frontier.append((nb_x, nb_pred))
        self.rules.leaves[pred.leaf_id] = RecoveredLeaf(box, pred.label)

    def _uncovered(self, regions: list[np.ndarray], box: np.ndarray) -> list[np.ndarray]:
        out = []
        for r in regions:
            if np.any(box[:, 1] <= r[:, 0]) or np.any(box[:, 0] >= r[:, 1]):
                out.append(r)
                continue
            rest = r.copy()
            for j in range(len(r)):
                if box[j, 0] > rest[j, 0]:
                    piece = rest.copy()
                    piece[j, 1] = box[j, 0]
                    out.append(piece)
                    rest[j, 0] = box[j, 0]
                if box[j, 1] < rest[j, 1]:
                    piece = rest.copy()
                    piece[j, 0] = box[j, 1]
                    out.append(piece)
                    rest[j, 1] = box[j, 1]
        return [r for r in out if np.all(r[:, 1] - r[:, 0] > 4 * self.eps)]

    def steps(self) -> Iterator[tuple[np.ndarray, Prediction]]:
        rng = np.random.default_rng(self.seed)
        x0 = sample_uniform(self.schema, 1, rng)[0]
        p0 = yield from self._query(x0)
        frontier = deque([(x0, p0)])
        queued = {p0.leaf_id}
        regions = [self.bounds.copy()]
        carved: set[int] = set()
        while True:
            while frontier:
                w, pred = frontier.popleft()
                if pred.leaf_id not in self.rules.leaves:
                    yield from self._recover(w, pred, frontier, queued)
            for leaf in sorted(set(self.rules.leaves) - carved):
                regions = self._uncovered(regions, self.rules.leaves[leaf].box)
                carved.add(leaf)
            if not regions:
                break
            r = regions.pop(0)
            c = (r[:, 0] + r[:, 1]) / 2
            pred = yield from self._query(c)
            if pred.leaf_id not in queued:
                queued.add(pred.leaf_id)
                frontier.append((c, pred))
        self.done = True

    def surrogate(self):
        if len(self.rules):
            return RuleSetClassifier(self.rules)
        if self._label_counts:
            top = max(self._label_counts.values())
            return ConstantClassifier(min(l for l, n in self._label_counts.items() if n == top))
        return NullClassifier()


def _drive(attack, budget: AttackBudget, snapshot) -> AttackRun:
    queries: list[tuple[np.ndarray, Prediction]] = []
    checkpoints: list[tuple[int, object]] = []
    for x, pred in itertools.islice(attack.steps(), budget.max_queries):
        queries.append((x, pred))
        if len(queries) % budget.checkpoint_every == 0:
            checkpoints.append((len(queries), snapshot()))
    # the attack may record its last leaf after the final query, so refresh the closing checkpoint
    if checkpoints and checkpoints[-1][0] == len(queries):
        checkpoints.pop()
    checkpoints.append((len(queries), snapshot()))
    return AttackRun(queries, checkpoints)


def random_attack(oracle: Oracle, schema: Schema, budget: AttackBudget,
                  params: TreeParams = TreeParams()) -> AttackRun:
    """Checkpoints carry the surrogate tree trained on the labels seen so far."""
    if budget.max_queries is None:
        raise AttackError("random attack needs a finite budget")
    attack = RandomAttack(oracle, schema, budget.seed, params)
    return _drive(attack, budget, attack.surrogate)


def pathfinding_attack(oracle: Oracle, schema: Schema, budget: AttackBudget, eps: float = 1e-6) -> AttackRun:
    """Checkpoints carry a copy of the rule set recovered so far."""
    attack = PathfindingAttack(oracle, schema, budget.seed, eps)
    return _drive(attack, budget, attack.rules.copy)


def make_attack(kind: str, oracle: Oracle, schema: Schema, seed: int, eps: float = 1e-6,
                params: TreeParams = TreeParams()):
    if kind == "random":
        return RandomAttack(oracle, schema, seed, params)
    if kind == "pathfinding":
        return PathfindingAttack(oracle, schema, seed, eps)
    raise AttackError(f"unknown attack kind {kind!r}")


TRACE_FIELDS = ("seq", "user_id")


def write_trace(path, schema: Schema, records: Iterable[tuple[str, np.ndarray, Prediction]]) -> None:
    """Attack trace CSV: seq, user_id, one column per feature, class, leaf_id."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seq", "user_id", *schema.names, "class", "leaf_id"])
        for seq, (user, x, pred) in enumerate(records, start=1):
            w.writerow([seq, user, *(repr(v) if isinstance(v, float) else v for v in schema.decode(x)),
                        pred.label, pred.leaf_id])


def read_trace(path, schema: Schema) -> list[tuple[str, np.ndarray, Prediction]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["seq", "user_id", *schema.names, "class", "leaf_id"]
        if header != expected:
            raise AttackError(f"{path}: header {header} does not match {expected}")
        d = len(schema)
        for row in reader:
            if not row:
                continue
            x = schema.encode(row[2:2 + d])
            out.append((row[1], x, Prediction(row[2 + d], int(row[3 + d]))))
    return out
