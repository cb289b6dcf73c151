"""Random continuous trees and datasets labeled by them."""

from __future__ import annotations

import numpy as np

from .dataset import Dataset, FeatureSchema, Schema, sample_uniform
from .tree import DecisionTree, Node


def unit_schema(d: int, names=None) -> Schema:
    names = names or [f"x{j}" for j in range(d)]
    return Schema(tuple(FeatureSchema(n, bounds=(0.0, 1.0)) for n in names))


def random_tree(schema: Schema, n_leaves: int, classes, rng: np.random.Generator,
                margin: float = 0.15) -> DecisionTree:
    """Grow a random tree by repeatedly splitting a random leaf's box.

    Thresholds fall in the middle ``1 - 2*margin`` of the leaf's extent so no
    cell becomes a sliver. Every class labels at least one leaf when
    ``n_leaves >= len(classes)``.
    """
    if not schema.all_continuous:
        raise ValueError("random_tree builds continuous trees only")
    bounds = schema.continuous_bounds()
    # node: [box, feature, threshold, left, right]
    nodes = [{"box": bounds.copy()}]
    leaves = [0]
    while len(leaves) < n_leaves:
        i = leaves.pop(int(rng.integers(len(leaves))))
        box = nodes[i]["box"]
        j = int(rng.integers(len(schema)))
        lo, hi = box[j]
        t = float(lo + (hi - lo) * rng.uniform(margin, 1 - margin))
        lbox, rbox = box.copy(), box.copy()
        lbox[j, 1] = t
        rbox[j, 0] = t
        nodes[i].update(feature=j, threshold=t, left=len(nodes), right=len(nodes) + 1)
        nodes.append({"box": lbox})
        nodes.append({"box": rbox})
        leaves += [len(nodes) - 2, len(nodes) - 1]
    classes = list(classes)
    labels = list(rng.permutation(classes * (n_leaves // len(classes) + 1))[:n_leaves]) \
        if n_leaves >= len(classes) else list(rng.choice(classes, n_leaves))
    # renumber into depth-first pre-order, leaf ids in visit order
    out, order, leaf_id = [], {}, 0
    stack = [0]
    while stack:
        i = stack.pop()
        order[i] = len(out)
        out.append(i)
        if "feature" in nodes[i]:
            stack += [nodes[i]["right"], nodes[i]["left"]]
    final = []
    for i in out:
        nd = nodes[i]
        if "feature" in nd:
            final.append(Node(feature=nd["feature"], threshold=nd["threshold"],
                              left=order[nd["left"]], right=order[nd["right"]]))
        else:
            final.append(Node(leaf_id=leaf_id, label=str(labels[leaf_id])))
            leaf_id += 1
    return DecisionTree(schema, sorted(set(map(str, classes))), final)


def labeled_sample(tree: DecisionTree, n: int, rng: np.random.Generator, noise: float = 0.0) -> Dataset:
    """Uniform points labeled by ``tree``; each label flips to a random class with prob ``noise``."""
    X = sample_uniform(tree.schema, n, rng)
    y = tree.predict_class_index(X)
    if noise > 0:
        flip = rng.random(n) < noise
        y = np.where(flip, rng.integers(0, len(tree.classes), n), y)
    return Dataset(tree.schema, X, y, tree.classes)
