"""Agreement rates, entropy, tree information gain and validation-set score."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .tree import DecisionTree, TreeParams, train


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class AgreementReport:
    r_test: float
    r_unif: float
    n_test: int
    n_unif: int

    @property
    def one_minus_r_test(self) -> float:
        return 1.0 - self.r_test

    @property
    def one_minus_r_unif(self) -> float:
        return 1.0 - self.r_unif


def disagreement(f_hat, f, points: np.ndarray) -> float:
    """Fraction of ``points`` on which the two models' class labels differ.

    Any object with ``predict_labels(X)`` works as a model.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(1, -1)
    if not len(points):
        raise MetricError("disagreement needs at least one point")
    a = np.asarray(f_hat.predict_labels(points))
    b = np.asarray(f.predict_labels(points))
    return float(np.mean(a != b))


def agreement_report(f_hat, f, test_points: np.ndarray, unif_points: np.ndarray) -> AgreementReport:
    return AgreementReport(
        r_test=disagreement(f_hat, f, test_points),
        r_unif=disagreement(f_hat, f, unif_points),
        n_test=len(test_points),
        n_unif=len(unif_points),
    )


def entropy_from_counts(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n <= 0:
        raise MetricError("entropy of an empty set")
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def entropy(labels: Sequence, alphabet: Sequence | None = None) -> float:
    """Shannon entropy in bits of a label multiset."""
    labels = list(labels)
    if not labels:
        raise MetricError("entropy of an empty label list")
    if alphabet is not None:
        extra = set(labels) - set(alphabet)
        if extra:
            raise MetricError(f"labels {sorted(map(str, extra))} not in alphabet")
    _, counts = np.unique(np.asarray(labels, dtype=object).astype(str), return_counts=True)
    return entropy_from_counts(counts)


def _partition_entropy(leaves: np.ndarray, y: np.ndarray, n_classes: int) -> float:
    """Weighted mean entropy of ``y`` within groups given by ``leaves``."""
    n = len(y)
    _, group = np.unique(leaves, return_inverse=True)
    table = np.zeros((group.max() + 1, n_classes))
    np.add.at(table, (group, y), 1)
    sizes = table.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = table / sizes[:, None]
        h = -np.where(table > 0, p * np.log2(p), 0.0).sum(axis=1)
    return float((sizes / n * h).sum())


def ig_tree_arrays(X: np.ndarray, y: np.ndarray, n_classes: int, tree: DecisionTree) -> float:
    if not len(y):
        raise MetricError("information gain needs a non-empty set")
    total = entropy_from_counts(np.bincount(y, minlength=n_classes))
    gain = total - _partition_entropy(tree.apply(X), y, n_classes)
    # guard against -0.0 and 1-ulp negatives from the subtraction
    return max(gain, 0.0) if gain > -1e-12 else gain


def ig_tree(validation: Dataset, tree: DecisionTree) -> float:
    """Entropy of ``validation`` minus the weighted entropy of its parts under the tree's leaves."""
    return ig_tree_arrays(validation.X, validation.y, len(validation.classes), tree)


@dataclass(frozen=True)
class IGStatus:
    status: float
    over_100: bool


def extraction_status_ig(validation: Dataset, t_user: DecisionTree, t_source: DecisionTree | None = None,
                         normalize: str = "source", source_gain: float | None = None) -> IGStatus:
    """User-tree gain relative to the source tree's gain on the validation set, in percent.

    ``normalize="entropy"`` divides by the validation entropy instead. The
    ratio is not clamped; ``over_100`` flags values above 100.
    """
    if normalize == "source":
        denom = source_gain if source_gain is not None else ig_tree(validation, t_source)
        if denom <= 0:
            raise MetricError("validation set uninformative: source tree has zero information gain on it")
    elif normalize == "entropy":
        denom = entropy_from_counts(np.bincount(validation.y, minlength=len(validation.classes)))
        if denom <= 0:
            raise MetricError("validation set uninformative: zero entropy")
    else:
        raise MetricError(f"unknown normalization {normalize!r}")
    status = ig_tree(validation, t_user) / denom * 100.0
    return IGStatus(status=status, over_100=status > 100.0)


def validation_score(train_set: Dataset, validation: Dataset, params: TreeParams = TreeParams()) -> float:
    """Information content of a validation set, judged against the training set."""
    if not len(train_set) or not len(validation):
        raise MetricError("validation_score needs non-empty train and validation sets")
    h = entropy_from_counts(np.bincount(train_set.y, minlength=len(train_set.classes)))
    if h <= 0:
        raise MetricError("training set has zero entropy")
    tree = train(validation, params)
    return ig_tree(train_set, tree) / h
