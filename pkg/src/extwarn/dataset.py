"""Tabular classification datasets: schema, CSV loading, splitting, uniform sampling.

Feature vectors are stored encoded as float rows: continuous values as-is,
categorical values as the index of the category in the schema's category list.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class DatasetError(ValueError):
    """Raised for malformed schemas, rows or split requests."""


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    kind: str = CONTINUOUS
    bounds: tuple[float, float] | None = None
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind == CONTINUOUS:
            if self.bounds is None or self.categories is not None:
                raise DatasetError(f"feature {self.name!r}: continuous needs bounds and no categories")
            lo, hi = (float(b) for b in self.bounds)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise DatasetError(f"feature {self.name!r}: bounds must satisfy lo < hi, got {self.bounds}")
            object.__setattr__(self, "bounds", (lo, hi))
        elif self.kind == CATEGORICAL:
            if self.bounds is not None or not self.categories:
                raise DatasetError(f"feature {self.name!r}: categorical needs categories and no bounds")
            cats = tuple(str(c) for c in self.categories)
            if len(set(cats)) != len(cats):
                raise DatasetError(f"feature {self.name!r}: duplicate categories")
            object.__setattr__(self, "categories", cats)
        else:
            raise DatasetError(f"feature {self.name!r}: unknown kind {self.kind!r}")

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS

    def to_json(self) -> dict:
        if self.is_continuous:
            return {"name": self.name, "kind": self.kind, "bounds": list(self.bounds)}
        return {"name": self.name, "kind": self.kind, "categories": list(self.categories)}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        try:
            name, kind = obj["name"], obj["kind"]
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"schema entry {obj!r} lacks name/kind") from exc
        bounds = obj.get("bounds")
        cats = obj.get("categories")
        return cls(
            name=str(name),
            kind=kind,
            bounds=tuple(bounds) if bounds is not None else None,
            categories=tuple(cats) if cats is not None else None,
        )


@dataclass(frozen=True)
class Schema:
    """Ordered feature list with encoding helpers."""

    features: tuple[FeatureSchema, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if not names:
            raise DatasetError("schema has no features")
        if len(set(names)) != len(names):
            raise DatasetError("duplicate feature names in schema")

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, i) -> FeatureSchema:
        return self.features[i]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def continuous_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.is_continuous]

    @property
    def all_continuous(self) -> bool:
        return all(f.is_continuous for f in self.features)

    def continuous_bounds(self) -> np.ndarray:
        """(f_t, 2) array of [lo, hi] for each continuous feature."""
        return np.array([f.bounds for f in self.features if f.is_continuous], dtype=float).reshape(-1, 2)

    def volume(self) -> float:
        b = self.continuous_bounds()
        return float(np.prod(b[:, 1] - b[:, 0])) if len(b) else 1.0

    def encode(self, vector: Sequence) -> np.ndarray:
        """Encode one raw vector (category names allowed) into a float row."""
        if len(vector) != len(self.features):
            raise DatasetError(f"vector has {len(vector)} values, schema has {len(self.features)}")
        out = np.empty(len(self.features))
        for i, (f, v) in enumerate(zip(self.features, vector)):
            if f.is_continuous:
                out[i] = float(v)
            elif isinstance(v, str):
                try:
                    out[i] = f.categories.index(v)
                except ValueError:
                    raise DatasetError(f"feature {f.name!r}: unknown category {v!r}") from None
            else:
                code = int(v)
                if code != v or not 0 <= code < len(f.categories):
                    raise DatasetError(f"feature {f.name!r}: category code {v!r} out of range")
                out[i] = code
        return out

    def decode(self, row: Sequence[float]) -> list:
        return [float(v) if f.is_continuous else f.categories[int(v)] for f, v in zip(self.features, row)]

    def to_json(self) -> list[dict]:
        return [f.to_json() for f in self.features]

    @classmethod
    def from_json(cls, obj) -> "Schema":
        if not isinstance(obj, list):
            raise DatasetError("schema JSON must be an array of feature objects")
        return cls(tuple(FeatureSchema.from_json(o) for o in obj))


def load_schema(path: str | Path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_json(json.load(fh))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled rows over a schema.

    ``X`` is the (n, d) encoded feature matrix, ``y`` holds indices into
    ``classes``.
    """

    schema: Schema
    X: np.ndarray
    y: np.ndarray
    classes: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float).reshape(-1, len(self.schema))
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if len(X) != len(y):
            raise DatasetError("X and y lengths differ")
        if len(set(self.classes)) != len(self.classes):
            raise DatasetError("class alphabet has duplicates")
        if len(y) and (y.min() < 0 or y.max() >= len(self.classes)):
            raise DatasetError("label index outside class alphabet")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "classes", tuple(self.classes))

    @classmethod
    def from_rows(cls, schema: Schema, rows: Iterable[tuple[Sequence, str]], classes: Sequence[str] | None = None):
        rows = list(rows)
        labels = [str(lbl) for _, lbl in rows]
        if classes is None:
            classes = sorted(set(labels))
        index = {c: i for i, c in enumerate(classes)}
        X = np.array([schema.encode(v) for v, _ in rows], dtype=float).reshape(-1, len(schema))
        for lbl in labels:
            if lbl not in index:
                raise DatasetError(f"label {lbl!r} not in class alphabet")
        return cls(schema, X, np.array([index[l] for l in labels], dtype=np.int64), tuple(classes))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def labels(self) -> list[str]:
        return [self.classes[i] for i in self.y]

    def rows(self) -> list[tuple[list, str]]:
        return [(self.schema.decode(x), self.classes[c]) for x, c in zip(self.X, self.y)]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.schema, self.X[index], self.y[index], self.classes)


@dataclass(frozen=True)
class ClassStats:
    probs: dict[str, float]
    volumes: dict[str, float]


def _parse_value(f: FeatureSchema, raw: str, lineno: int) -> float:
    raw = raw.strip()
    if f.is_continuous:
        try:
            v = float(raw)
        except ValueError:
            raise DatasetError(f"line {lineno}, field {f.name!r}: cannot parse number {raw!r}") from None
        lo, hi = f.bounds
        if not (lo <= v <= hi):
            raise DatasetError(f"line {lineno}, field {f.name!r}: value {v} outside bounds [{lo}, {hi}]")
        return v
    try:
        return float(f.categories.index(raw))
    except ValueError:
        raise DatasetError(f"line {lineno}, field {f.name!r}: unknown category {raw!r}") from None


def load_csv(path: str | Path, schema: Schema | Sequence[FeatureSchema], classes: Sequence[str] | None = None) -> Dataset:
    """Load a headered CSV whose last column is the class label."""
    if not isinstance(schema, Schema):
        schema = Schema(tuple(schema))
    X, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file, header row required")
        header = [h.strip() for h in header]
        if header[:-1] != schema.names or len(header) != len(schema) + 1:
            raise DatasetError(f"{path}: header {header} does not match schema names {schema.names} + label")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            X.append([_parse_value(f, raw, lineno) for f, raw in zip(schema, row[:-1])])
            labels.append(row[-1].strip())
    if classes is None:
        classes = sorted(set(labels))
    index = {c: i for i, c in enumerate(classes)}
    unknown = [l for l in labels if l not in index]
    if unknown:
        raise DatasetError(f"label {unknown[0]!r} not in class alphabet {list(classes)}")
    return Dataset(schema, np.array(X, dtype=float).reshape(-1, len(schema)),
                   np.array([index[l] for l in labels], dtype=np.int64), tuple(classes))


def write_csv(data: Dataset, path: str | Path, label_name: str = "label") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(data.schema.names + [label_name])
        for vec, lbl in data.rows():
            w.writerow([repr(v) if isinstance(v, float) else v for v in vec] + [lbl])


def split(data: Dataset, fractions: tuple[float, float, float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle and partition into (train, test, validation).

    Test and validation sizes are ``floor(n * fraction)``; train takes the rest.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetError(f"fractions must be three positive reals summing to 1, got {fractions}")
    n = len(data)
    n_test = math.floor(n * fractions[1] + 1e-9)
    n_val = math.floor(n * fractions[2] + 1e-9)
    n_train = n - n_test - n_val
    if min(n_train, n_test, n_val) <= 0:
        raise DatasetError(f"split of {n} rows by {fractions} leaves an empty part ({n_train}, {n_test}, {n_val})")
    perm = np.random.default_rng(seed).permutation(n)
    return (
        data.subset(perm[:n_train]),
        data.subset(perm[n_train:n_train + n_test]),
        data.subset(perm[n_train + n_test:]),
    )


def sample_uniform(schema: Schema, n: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Draw ``n`` encoded vectors uniformly over the feature space."""
    if n < 1:
        raise DatasetError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = np.empty((n, len(schema)))
    for j, f in enumerate(schema):
        if f.is_continuous:
            out[:, j] = rng.uniform(f.bounds[0], f.bounds[1], size=n)
        else:
            out[:, j] = rng.integers(0, len(f.categories), size=n)
    return out


def class_stats(train: Dataset, model) -> ClassStats:
    """Training-label frequencies and per-class hypervolume of the model's leaf boxes."""
    if model.has_categorical_splits():
        raise DatasetError(
            "model splits on categorical features; class volumes are undefined, use the information-gain monitor"
        )
    counts = np.bincount(train.y, minlength=len(train.classes))
    total = counts.sum()
    if total == 0:
        raise DatasetError("training set is empty")
    probs = {c: float(counts[i] / total) for i, c in enumerate(train.classes)}
    volumes = {c: 0.0 for c in model.classes}
    for leaf in range(model.leaf_count):
        box = model.leaf_box(leaf)
        volumes[model.leaf_class(leaf)] += float(np.prod(box[:, 1] - box[:, 0]))
    return ClassStats(probs=probs, volumes=volumes)
