"""Binary entropy-split decision trees whose predictions carry a leaf id."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset, DatasetError, Schema

_GAIN_TOL = 1e-12


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class TreeParams:
    max_depth: float = math.inf
    min_leaf: int = 1
    min_gain: float = 0.0

    def __post_init__(self):
        if self.min_leaf < 1:
            raise TreeError("min_leaf must be >= 1")
        if self.max_depth < 0:
            raise TreeError("max_depth must be >= 0")

    def to_json(self) -> dict:
        return {
            "max_depth": None if math.isinf(self.max_depth) else int(self.max_depth),
            "min_leaf": self.min_leaf,
            "min_gain": self.min_gain,
        }

    @classmethod
    def from_json(cls, obj: dict | None) -> "TreeParams":
        obj = obj or {}
        depth = obj.get("max_depth")
        return cls(
            max_depth=math.inf if depth is None else depth,
            min_leaf=int(obj.get("min_leaf", 1)),
            min_gain=float(obj.get("min_gain", 0.0)),
        )


@dataclass(frozen=True)
class Node:
    """Either a split (``feature`` set) or a leaf (``leaf_id`` set).

    Continuous splits send ``x <= threshold`` left; categorical splits send
    values whose category index is in ``subset`` left.
    """

    feature: int = -1
    threshold: float | None = None
    subset: frozenset[int] | None = None
    left: int = -1
    right: int = -1
    leaf_id: int = -1
    label: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.leaf_id >= 0


@dataclass(frozen=True)
class Prediction:
    label: str
    leaf_id: int


class DecisionTree:
    def __init__(self, schema: Schema, classes: Sequence[str], nodes: Sequence[Node]):
        self.schema = schema
        self.classes = tuple(classes)
        self.nodes = tuple(nodes)
        self._validate()
        self._compile()

    # -- structure -------------------------------------------------------
    def _validate(self):
        nodes = self.nodes
        if not nodes:
            raise TreeError("tree has no nodes")
        seen = {0}
        stack = [0]
        leaf_ids = []
        while stack:
            i = stack.pop()
            node = nodes[i]
            if node.is_leaf:
                if node.label not in self.classes:
                    raise TreeError(f"nodes[{i}]: leaf class {node.label!r} not in classes")
                leaf_ids.append(node.leaf_id)
                continue
            if not 0 <= node.feature < len(self.schema):
                raise TreeError(f"nodes[{i}]: feature index {node.feature} out of range")
            f = self.schema[node.feature]
            if f.is_continuous:
                if node.threshold is None or not (f.bounds[0] < node.threshold < f.bounds[1]):
                    raise TreeError(f"nodes[{i}]: threshold {node.threshold} not strictly inside {f.bounds}")
            else:
                if not node.subset or len(node.subset) >= len(f.categories) or \
                        not all(0 <= c < len(f.categories) for c in node.subset):
                    raise TreeError(f"nodes[{i}]: subset must be a non-empty proper subset of categories")
            for child in (node.left, node.right):
                if not 0 <= child < len(nodes):
                    raise TreeError(f"nodes[{i}]: child index {child} out of range")
                if child in seen:
                    raise TreeError(f"nodes[{i}]: node {child} has more than one parent")
                seen.add(child)
                stack.append(child)
        if len(seen) != len(nodes):
            missing = sorted(set(range(len(nodes))) - seen)
            raise TreeError(f"nodes {missing} unreachable from root")
        if sorted(leaf_ids) != list(range(len(leaf_ids))):
            raise TreeError("leaf ids must be exactly 0..leaf_count-1")
        self.leaf_count = len(leaf_ids)
        self._check_paths()

    def _check_paths(self):
        """Compute per-leaf boxes over all features and reject contradictory paths."""
        d = len(self.schema)
        lo = np.full(d, -np.inf)
        hi = np.full(d, np.inf)
        allowed = [None if f.is_continuous else frozenset(range(len(f.categories))) for f in self.schema]
        for j, f in enumerate(self.schema):
            if f.is_continuous:
                lo[j], hi[j] = f.bounds
        self._paths = [None] * self.leaf_count
        self._categorical_on_path = [False] * self.leaf_count
        stack = [(0, lo, hi, allowed, False)]
        while stack:
            i, lo, hi, allowed, cat = stack.pop()
            node = self.nodes[i]
            if node.is_leaf:
                self._paths[node.leaf_id] = np.stack([lo, hi], axis=1)
                self._categorical_on_path[node.leaf_id] = cat
                continue
            j = node.feature
            if node.threshold is not None:
                l_hi, r_lo = hi.copy(), lo.copy()
                l_hi[j] = min(hi[j], node.threshold)
                r_lo[j] = max(lo[j], node.threshold)
                if not (lo[j] < l_hi[j]) or not (r_lo[j] < hi[j]):
                    raise TreeError(f"nodes[{i}]: threshold contradicts constraints above it")
                stack.append((node.right, r_lo, hi, allowed, cat))
                stack.append((node.left, lo, l_hi, allowed, cat))
            else:
                left_set = allowed[j] & node.subset
                right_set = allowed[j] - node.subset
                if not left_set or not right_set:
                    raise TreeError(f"nodes[{i}]: category subset contradicts constraints above it")
                la, ra = list(allowed), list(allowed)
                la[j], ra[j] = left_set, right_set
                stack.append((node.right, lo, hi, ra, True))
                stack.append((node.left, lo, hi, la, True))

    def _compile(self):
        n = len(self.nodes)
        self._is_leaf = np.array([nd.is_leaf for nd in self.nodes])
        self._feature = np.array([max(nd.feature, 0) for nd in self.nodes], dtype=np.int64)
        self._threshold = np.array([nd.threshold if nd.threshold is not None else np.nan for nd in self.nodes])
        self._is_cat = np.array([nd.subset is not None for nd in self.nodes])
        self._left = np.array([nd.left for nd in self.nodes], dtype=np.int64)
        self._right = np.array([nd.right for nd in self.nodes], dtype=np.int64)
        self._leaf_of_node = np.array([nd.leaf_id for nd in self.nodes], dtype=np.int64)
        width = max([len(f.categories) for f in self.schema if not f.is_continuous] or [1])
        self._subset_mask = np.zeros((n, width), dtype=bool)
        for i, nd in enumerate(self.nodes):
            if nd.subset is not None:
                self._subset_mask[i, list(nd.subset)] = True
        labels = [None] * self.leaf_count
        for nd in self.nodes:
            if nd.is_leaf:
                labels[nd.leaf_id] = nd.label
        self._leaf_labels = tuple(labels)
        cls_index = {c: i for i, c in enumerate(self.classes)}
        self._leaf_class_index = np.array([cls_index[l] for l in labels], dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return self.schema == other.schema and self.classes == other.classes and self.nodes == other.nodes

    def __repr__(self):
        return f"DecisionTree(leaves={self.leaf_count}, nodes={len(self.nodes)}, classes={list(self.classes)})"

    @property
    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            i, d = stack.pop()
            nd = self.nodes[i]
            if nd.is_leaf:
                best = max(best, d)
            else:
                stack += [(nd.left, d + 1), (nd.right, d + 1)]
        return best

    def leaf_class(self, leaf_id: int) -> str:
        return self._leaf_labels[leaf_id]

    @property
    def leaf_labels(self) -> tuple[str, ...]:
        return self._leaf_labels

    def has_categorical_splits(self) -> bool:
        return bool(self._is_cat.any())

    # -- prediction -------------------------------------------------------
    def _route(self, x: np.ndarray) -> int:
        i = 0
        nodes = self.nodes
        while True:
            nd = nodes[i]
            if nd.leaf_id >= 0:
                return nd.leaf_id
            v = x[nd.feature]
            if nd.subset is None:
                i = nd.left if v <= nd.threshold else nd.right
            else:
                i = nd.left if int(v) in nd.subset else nd.right

    def predict(self, x: Sequence) -> Prediction:
        """Route one vector; raw category names or encoded codes are both accepted."""
        row = x if isinstance(x, np.ndarray) and x.dtype.kind == "f" else self.schema.encode(x)
        if len(row) != len(self.schema):
            raise DatasetError(f"vector has {len(row)} values, schema has {len(self.schema)}")
        for j in self.schema_categorical:
            c = row[j]
            if not (0 <= c < len(self.schema[j].categories)) or c != int(c):
                raise DatasetError(f"feature {self.schema[j].name!r}: category code {c} out of schema")
        leaf = self._route(row)
        return Prediction(self._leaf_labels[leaf], leaf)

    @property
    def schema_categorical(self) -> list[int]:
        return [j for j, f in enumerate(self.schema) if not f.is_continuous]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf id for every row of an encoded matrix."""
        X = np.asarray(X, dtype=float).reshape(-1, len(self.schema))
        node = np.zeros(len(X), dtype=np.int64)
        active = np.arange(len(X))
        while len(active):
            nd = node[active]
            internal = ~self._is_leaf[nd]
            active, nd = active[internal], nd[internal]
            if not len(active):
                break
            f = self._feature[nd]
            vals = X[active, f]
            go_left = np.where(
                self._is_cat[nd],
                self._subset_mask[nd, np.clip(vals, 0, self._subset_mask.shape[1] - 1).astype(np.int64)],
                vals <= self._threshold[nd],
            )
            node[active] = np.where(go_left, self._left[nd], self._right[nd])
        return self._leaf_of_node[node]

    def predict_class_index(self, X: np.ndarray) -> np.ndarray:
        return self._leaf_class_index[self.apply(X)]

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self._leaf_labels, dtype=object)[self.apply(X)]

    # -- geometry ---------------------------------------------------------
    def leaf_box(self, leaf_id: int, strict: bool = True) -> np.ndarray:
        """(f_t, 2) [lo, hi] bounds of the leaf over the continuous features.

        With ``strict`` a categorical split on the leaf's path is an error;
        otherwise categorical constraints are ignored.
        """
        if not 0 <= leaf_id < self.leaf_count:
            raise TreeError(f"leaf id {leaf_id} out of range 0..{self.leaf_count - 1}")
        if strict and self._categorical_on_path[leaf_id]:
            raise TreeError(f"leaf {leaf_id} has a categorical split on its path; no box is defined")
        return self._paths[leaf_id][self.schema.continuous_indices].copy()

    def leaf_boxes(self, strict: bool = True) -> np.ndarray:
        """(leaf_count, f_t, 2) array of all leaf boxes."""
        return np.stack([self.leaf_box(i, strict) for i in range(self.leaf_count)])

    # -- serialization ----------------------------------------------------
    def to_json(self) -> dict:
        out = []
        for nd in self.nodes:
            if nd.is_leaf:
                out.append({"type": "leaf", "leaf_id": nd.leaf_id, "class": nd.label})
            elif nd.subset is None:
                out.append({"type": "split", "feature": nd.feature, "threshold": nd.threshold,
                            "left": nd.left, "right": nd.right})
            else:
                cats = self.schema[nd.feature].categories
                out.append({"type": "split", "feature": nd.feature, "subset": [cats[c] for c in sorted(nd.subset)],
                            "left": nd.left, "right": nd.right})
        return {"schema": self.schema.to_json(), "classes": list(self.classes), "nodes": out}

    @classmethod
    def from_json(cls, obj) -> "DecisionTree":
        if not isinstance(obj, dict):
            raise TreeError("tree JSON must be an object")
        for key in ("schema", "nodes"):
            if key not in obj:
                raise TreeError(f"tree JSON missing field {key!r}")
        try:
            schema = Schema.from_json(obj["schema"])
        except DatasetError as exc:
            raise TreeError(f"schema: {exc}") from exc
        raw = obj["nodes"]
        if not isinstance(raw, list) or not raw:
            raise TreeError("nodes: must be a non-empty array")
        nodes = []
        for i, r in enumerate(raw):
            where = f"nodes[{i}]"
            if not isinstance(r, dict) or r.get("type") not in ("split", "leaf"):
                raise TreeError(f"{where}: expected object with type 'split' or 'leaf'")
            try:
                if r["type"] == "leaf":
                    nodes.append(Node(leaf_id=int(r["leaf_id"]), label=str(r["class"])))
                    continue
                feature = int(r["feature"])
                left, right = int(r["left"]), int(r["right"])
            except (KeyError, TypeError, ValueError) as exc:
                raise TreeError(f"{where}: missing or invalid field {exc}") from None
            if not 0 <= feature < len(schema):
                raise TreeError(f"{where}: feature index {feature} out of range")
            f = schema[feature]
            if f.is_continuous:
                if "threshold" not in r or not isinstance(r["threshold"], (int, float)):
                    raise TreeError(f"{where}: continuous split needs a numeric threshold")
                nodes.append(Node(feature=feature, threshold=float(r["threshold"]), left=left, right=right))
            else:
                sub = r.get("subset")
                if not isinstance(sub, list):
                    raise TreeError(f"{where}: categorical split needs a subset array")
                try:
                    codes = frozenset(f.categories.index(str(c)) for c in sub)
                except ValueError:
                    raise TreeError(f"{where}: subset has unknown category") from None
                nodes.append(Node(feature=feature, subset=codes, left=left, right=right))
        classes = obj.get("classes")
        if classes is None:
            classes = sorted({n.label for n in nodes if n.is_leaf})
        return cls(schema, classes, nodes)


def serialize(tree: DecisionTree) -> bytes:
    return json.dumps(tree.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def deserialize(data: bytes | str) -> DecisionTree:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise TreeError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return DecisionTree.from_json(obj)


def save(tree: DecisionTree, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(tree))


def load(path) -> DecisionTree:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


# -- training ---------------------------------------------------------------

def _xlogx(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    out = np.zeros_like(c)
    pos = c > 0
    out[pos] = c[pos] * np.log2(c[pos])
    return out


def _node_entropy_mass(counts: np.ndarray) -> np.ndarray:
    """n * H(counts) along the last axis, i.e. f(n) - sum f(c_i)."""
    return _xlogx(counts.sum(axis=-1)) - _xlogx(counts).sum(axis=-1)


def _best_continuous(xs, ys, n_classes, parent_mass, min_leaf):
    n = len(xs)
    order = np.argsort(xs, kind="stable")
    xs_s = xs[order]
    cum = np.cumsum(np.eye(n_classes, dtype=np.int64)[ys[order]], axis=0)
    # candidate i puts sorted[:i+1] left
    pos = np.arange(min_leaf - 1, n - min_leaf)
    if not len(pos):
        return None
    pos = pos[xs_s[pos] < xs_s[pos + 1]]
    if not len(pos):
        return None
    left = cum[pos]
    right = cum[-1] - left
    gain = (parent_mass - _node_entropy_mass(left) - _node_entropy_mass(right)) / n
    best = gain.max()
    i = pos[np.flatnonzero(gain >= best - _GAIN_TOL)[0]]
    a, b = xs_s[i], xs_s[i + 1]
    thr = (a + b) / 2.0
    if not a <= thr < b:
        thr = a
    return best, thr


def _best_categorical(xs, ys, n_classes, n_categories, parent_mass, min_leaf):
    n = len(xs)
    codes = xs.astype(np.int64)
    table = np.zeros((n_categories, n_classes), dtype=np.int64)
    np.add.at(table, (codes, ys), 1)
    total = table.sum(axis=0)
    sizes = table.sum(axis=1)
    ok = (sizes >= min_leaf) & (n - sizes >= min_leaf) & (sizes > 0)
    if not ok.any():
        return None
    cats = np.flatnonzero(ok)
    left = table[cats]
    gain = (parent_mass - _node_entropy_mass(left) - _node_entropy_mass(total - left)) / n
    best = gain.max()
    c = cats[np.flatnonzero(gain >= best - _GAIN_TOL)[0]]
    return best, int(c)


def _majority(ys, classes):
    counts = np.bincount(ys, minlength=len(classes))
    top = counts.max()
    return min(classes[i] for i in np.flatnonzero(counts == top))


def train_arrays(schema: Schema, classes: Sequence[str], X: np.ndarray, y: np.ndarray,
                 params: TreeParams = TreeParams()) -> DecisionTree:
    """Greedy top-down induction on encoded arrays; ``y`` indexes ``classes``."""
    X = np.asarray(X, dtype=float).reshape(-1, len(schema))
    y = np.asarray(y, dtype=np.int64)
    if not len(y):
        raise TreeError("cannot train on empty data")
    classes = tuple(classes)
    n_classes = len(classes)
    cat_sizes = [None if f.is_continuous else len(f.categories) for f in schema]

    nodes: list[Node | None] = []
    leaf_counter = 0
    # (row indices, depth, parent node id, is_left)
    stack = [(np.arange(len(y)), 0, -1, False)]
    links = []
    while stack:
        idx, depth, parent, is_left = stack.pop()
        me = len(nodes)
        nodes.append(None)
        if parent >= 0:
            links.append((parent, is_left, me))
        ys = y[idx]
        counts = np.bincount(ys, minlength=n_classes)
        split = None
        if np.count_nonzero(counts) > 1 and depth < params.max_depth and len(idx) >= 2 * params.min_leaf:
            parent_mass = float(_node_entropy_mass(counts))
            best_gain = -np.inf
            for j in range(len(schema)):
                xs = X[idx, j]
                if cat_sizes[j] is None:
                    res = _best_continuous(xs, ys, n_classes, parent_mass, params.min_leaf)
                else:
                    res = _best_categorical(xs, ys, n_classes, cat_sizes[j], parent_mass, params.min_leaf)
                if res is not None and res[0] > best_gain + _GAIN_TOL:
                    best_gain, split = res[0], (j, res[1])
            if split is not None and (best_gain <= _GAIN_TOL or best_gain < params.min_gain):
                split = None
        if split is None:
            nodes[me] = Node(leaf_id=leaf_counter, label=_majority(ys, classes))
            leaf_counter += 1
            continue
        j, value = split
        if cat_sizes[j] is None:
            go_left = X[idx, j] <= value
            nodes[me] = Node(feature=j, threshold=float(value))
        else:
            go_left = X[idx, j].astype(np.int64) == value
            nodes[me] = Node(feature=j, subset=frozenset([value]))
        stack.append((idx[~go_left], depth + 1, me, False))
        stack.append((idx[go_left], depth + 1, me, True))

    children = {}
    for parent, is_left, child in links:
        children.setdefault(parent, {})["left" if is_left else "right"] = child
    final = []
    for i, nd in enumerate(nodes):
        if not nd.is_leaf:
            c = children[i]
            nd = Node(feature=nd.feature, threshold=nd.threshold, subset=nd.subset, left=c["left"], right=c["right"])
        final.append(nd)
    return DecisionTree(schema, classes, final)


def train(data: Dataset, params: TreeParams = TreeParams()) -> DecisionTree:
    if not len(data):
        raise TreeError("cannot train on empty data")
    return train_arrays(data.schema, data.classes, data.X, data.y, params)


def predict(tree: DecisionTree, x) -> Prediction:
    return tree.predict(x)


def leaf_box(tree: DecisionTree, leaf_id: int, strict: bool = True) -> np.ndarray:
    return tree.leaf_box(leaf_id, strict)
