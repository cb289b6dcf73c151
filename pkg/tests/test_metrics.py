import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import UNIT1, UNIT2, brute_entropy, constant, dataset_from, random_case, stump
from extwarn.dataset import Dataset, sample_uniform
from extwarn.metrics import (MetricError, agreement_report, disagreement, entropy, extraction_status_ig, ig_tree,
                             validation_score)
from extwarn.synthetic import random_tree
from extwarn.tree import DecisionTree, Node, TreeParams, train


def test_disagreement_identical_and_total():
    pts = sample_uniform(UNIT1, 100, 0)
    assert disagreement(stump(), stump(), pts) == 0.0
    assert disagreement(constant("A"), constant("B"), pts) == 1.0


def test_disagreement_mirror_and_shift():
    pts = sample_uniform(UNIT1, 1000, 5)
    assert disagreement(stump(0.3, "A", "B"), stump(0.3, "B", "A"), pts) == 1.0
    # symmetric difference of the two stumps is (0.3, 0.4]: measure 0.1
    assert disagreement(stump(0.3), stump(0.4), pts) == pytest.approx(0.1, abs=0.03)


def test_disagreement_empty_points():
    with pytest.raises(MetricError):
        disagreement(stump(), stump(), np.zeros((0, 1)))


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.01, 0.99), b=st.floats(0.01, 0.99), seed=st.integers(0, 1000))
def test_disagreement_symmetric(a, b, seed):
    pts = sample_uniform(UNIT1, 200, seed)
    assert disagreement(stump(a), stump(b), pts) == disagreement(stump(b), stump(a), pts)


def test_agreement_report():
    pts = sample_uniform(UNIT1, 50, 0)
    r = agreement_report(stump(), stump(), pts, pts)
    assert r.one_minus_r_test == 1.0 and r.one_minus_r_unif == 1.0 and r.n_test == 50


def test_entropy_examples():
    assert entropy(list("AABB")) == 1.0
    assert entropy(list("AAAA")) == 0.0
    expected = 0.75 * math.log2(4 / 3) + 0.25 * math.log2(4)
    assert entropy(list("AAAB")) == pytest.approx(expected, abs=1e-15)
    assert entropy(list("AAAB")) == pytest.approx(0.811278, abs=1e-6)


def test_entropy_errors():
    with pytest.raises(MetricError):
        entropy([])
    with pytest.raises(MetricError):
        entropy(["A", "Z"], ["A", "B"])


@given(k=st.integers(1, 40))
def test_entropy_uniform_is_log_k(k):
    assert entropy([str(i) for i in range(k)]) == pytest.approx(math.log2(k), abs=1e-12)


@given(st.lists(st.sampled_from("ABCDE"), min_size=1, max_size=60))
def test_entropy_matches_direct_count(labels):
    assert entropy(labels) == pytest.approx(brute_entropy(labels), abs=1e-12)


def test_ig_single_leaf_is_zero():
    d = Dataset(UNIT1, [0.1, 0.5, 0.9], [0, 1, 1], ("A", "B"))
    assert ig_tree(d, constant("A")) == 0.0


def test_ig_perfect_stump_is_entropy():
    d = Dataset(UNIT1, [0.1, 0.2, 0.5, 0.6, 0.9], [0, 0, 1, 1, 1], ("A", "B"))
    assert ig_tree(d, stump(0.3)) == pytest.approx(entropy(d.labels), abs=1e-12)


def _ig_oracle(data, tree):
    """Information gain by grouping rows per leaf in pure Python."""
    groups = {}
    for x, lbl in zip(data.X, data.labels):
        groups.setdefault(tree.predict(x).leaf_id, []).append(lbl)
    n = len(data)
    return brute_entropy(data.labels) - sum(len(g) / n * brute_entropy(g) for g in groups.values())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_ig_matches_oracle_and_bounds(seed):
    tree, rng = random_case(seed)
    data = dataset_from(tree, int(rng.integers(5, 200)), seed, noise=0.3)
    other = random_tree(tree.schema, int(rng.integers(1, 20)), ["a", "b", "c"], rng)
    g = ig_tree(data, other)
    assert g == pytest.approx(_ig_oracle(data, other), abs=1e-9)
    assert -1e-12 <= g <= entropy(data.labels) + 1e-9


def _split_leaf(tree: DecisionTree, leaf: int, feature: int) -> DecisionTree:
    """Refine one leaf by cutting its box in half along ``feature``; both halves keep its label."""
    thr = float(tree.leaf_box(leaf)[feature].mean())
    label = tree.leaf_class(leaf)
    nodes = list(tree.nodes)
    pos = next(i for i, nd in enumerate(nodes) if nd.leaf_id == leaf)
    nodes[pos] = Node(feature=feature, threshold=thr, left=len(nodes), right=len(nodes) + 1)
    nodes += [Node(leaf_id=leaf, label=label), Node(leaf_id=tree.leaf_count, label=label)]
    return DecisionTree(tree.schema, tree.classes, nodes)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_ig_monotone_under_refinement(seed):
    tree, rng = random_case(seed, n_leaves=int(np.random.default_rng(seed).integers(1, 15)))
    data = dataset_from(tree, 150, seed + 1, noise=0.4)
    coarse = random_tree(tree.schema, int(rng.integers(1, 10)), ["a", "b", "c"], rng)
    fine = _split_leaf(coarse, int(rng.integers(coarse.leaf_count)), int(rng.integers(len(tree.schema))))
    assert ig_tree(data, fine) >= ig_tree(data, coarse) - 1e-12


def test_ig_saturation_on_own_training_set():
    tree, _ = random_case(11, d=3, n_leaves=20)
    data = dataset_from(tree, 400, 2, noise=0.2)
    assert ig_tree(data, train(data)) == pytest.approx(entropy(data.labels), abs=1e-9)


def test_status_endpoints():
    tree, _ = random_case(4)
    data = dataset_from(tree, 200, 1)
    assert extraction_status_ig(data, tree, tree).status == 100.0
    single = DecisionTree(tree.schema, tree.classes, [Node(leaf_id=0, label=tree.classes[0])])
    assert extraction_status_ig(data, single, tree).status == 0.0


def test_status_over_100_is_reported_and_flagged():
    # the source cuts at 0.3 and cannot separate 0.45 (A) from 0.55 (B); the user tree can
    d = Dataset(UNIT1, [0.1, 0.45, 0.55, 0.9], [0, 0, 1, 1], ("A", "B"))
    user, source = stump(0.5), stump(0.3)
    s = extraction_status_ig(d, user, source)
    assert s.status > 100 and s.over_100
    assert s.status == pytest.approx(entropy(d.labels) / ig_tree(d, source) * 100)


def test_status_entropy_normalisation():
    d = Dataset(UNIT1, [0.1, 0.2, 0.5, 0.9], [0, 0, 1, 1], ("A", "B"))
    s = extraction_status_ig(d, stump(0.3), normalize="entropy")
    assert s.status == pytest.approx(100.0)


def test_status_uninformative_validation():
    d = Dataset(UNIT1, [0.1, 0.2], [0, 0], ("A", "B"))
    with pytest.raises(MetricError, match="uninformative"):
        extraction_status_ig(d, stump(), stump())


def test_validation_score_examples():
    tree, _ = random_case(2, d=2, n_leaves=6)
    tr = dataset_from(tree, 300, 0)
    assert validation_score(tr, tr) == pytest.approx(1.0, abs=1e-12)
    one_class = Dataset(tree.schema, tr.X[:5], np.zeros(5), tr.classes)
    assert validation_score(tr, one_class) == 0.0
    with pytest.raises(MetricError):
        validation_score(one_class, tr)


def test_validation_score_separable_ten_percent():
    sep = stump(0.5, "A", "B", UNIT2)
    # the stump only routes on feature 0 of the 2-feature schema
    data = dataset_from(sep, 2000, 3)
    rng = np.random.default_rng(0)
    val = data.subset(rng.choice(len(data), 200, replace=False))
    assert validation_score(data, val, TreeParams()) >= 0.9
