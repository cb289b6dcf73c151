import numpy as np
import pytest

from builders import UNIT2, dataset_from, random_case
from extwarn.collusion import CollusionError
from extwarn.dataset import Dataset, split
from extwarn.metrics import MetricError, extraction_status_ig, ig_tree
from extwarn.strategy1 import IGMonitor
from extwarn.synthetic import labeled_sample, random_tree, unit_schema
from extwarn.tree import DecisionTree, Node, train


def quadrants() -> DecisionTree:
    """x0 <= .5 and x1 <= .5 -> A, x0 <= .5 else B, x0 > .5 and x1 <= .5 -> C, else D."""
    n = [Node(feature=0, threshold=0.5, left=1, right=4),
         Node(feature=1, threshold=0.5, left=2, right=3), Node(leaf_id=0, label="A"), Node(leaf_id=1, label="B"),
         Node(feature=1, threshold=0.5, left=5, right=6), Node(leaf_id=2, label="C"), Node(leaf_id=3, label="D")]
    return DecisionTree(UNIT2, ["A", "B", "C", "D"], n)


def feed(monitor, user, source, X):
    for x in X:
        monitor.observe(user, x, source.predict(x))


@pytest.fixture
def quad():
    src = quadrants()
    val = dataset_from(src, 400, 0)
    return src, val, IGMonitor(src, val, threshold=50)


def test_observe_appends_with_sequence(quad):
    src, _, m = quad
    feed(m, "u", src, [[0.1, 0.1]])
    assert len(m.logs["u"]) == 1
    feed(m, "u", src, np.random.default_rng(0).uniform(size=(99, 2)))
    assert [r.seq for r in m.logs["u"].records] == list(range(1, 101))


def test_interleaved_users_isolated(quad):
    src, _, m = quad
    rng = np.random.default_rng(1)
    for i in range(30):
        feed(m, "a" if i % 3 else "b", src, rng.uniform(size=(1, 2)))
    assert len(m.logs["a"]) == 20 and len(m.logs["b"]) == 10
    assert m.logs["a"].records[0].x.tolist() != m.logs["b"].records[0].x.tolist()


def test_single_query_or_single_class_is_zero(quad):
    src, _, m = quad
    feed(m, "u", src, [[0.1, 0.1]])
    assert m.status_user("u").status == 0.0
    feed(m, "v", src, [[0.1, 0.1], [0.2, 0.3], [0.4, 0.2]])
    assert m.status_user("v").status == 0.0
    assert m.status_user("nobody").status == 0.0


def test_user_replicating_training_set():
    case, _ = random_case(5, d=2, n_leaves=10)
    tr, _, val = split(dataset_from(case, 3000, 1), seed=0)
    source = train(tr)
    m = IGMonitor(source, val)
    feed(m, "u", source, tr.X)
    r = m.status_user("u")
    assert r.status >= 99 and r.query_count == len(tr)


def test_exhaustive_source_labels_give_full_status(quad):
    src, val, m = quad
    # each validation point routed into a gap costs about one point of status, so coverage must be dense
    feed(m, "u", src, np.random.default_rng(2).uniform(size=(20_000, 2)))
    assert m.status_user("u").status == pytest.approx(100, abs=1)


def test_status_matches_metric_function(quad):
    src, val, m = quad
    X = np.random.default_rng(3).uniform(size=(40, 2))
    feed(m, "u", src, X)
    own = train(Dataset(UNIT2, X, src.predict_class_index(X), src.classes))
    assert m.status_user("u").status == pytest.approx(extraction_status_ig(val, own, src).status, abs=1e-12)


def test_warning_flag(quad):
    src, _, m = quad
    feed(m, "u", src, np.random.default_rng(4).uniform(size=(500, 2)))
    assert m.status_user("u").warning


def test_uninformative_validation_rejected():
    src = quadrants()
    val = Dataset(UNIT2, [[0.1, 0.1], [0.2, 0.2]], [0, 0], src.classes)
    with pytest.raises(MetricError, match="uninformative"):
        IGMonitor(src, val)


def _complementary(quad):
    src, val, m = quad
    rng = np.random.default_rng(5)
    left = rng.uniform(size=(300, 2)) * [0.5, 1]
    right = rng.uniform(size=(300, 2)) * [0.5, 1] + [0.5, 0]
    feed(m, "u1", src, left)
    feed(m, "u2", src, right)
    # u3 and u4 each stay inside one quadrant
    feed(m, "u3", src, rng.uniform(size=(40, 2)) * 0.45)
    feed(m, "u4", src, rng.uniform(size=(40, 2)) * 0.3 + 0.6)
    return m


def test_brute_finds_complementary_pair(quad):
    m = _complementary(quad)
    res = m.comb_user_selection(2)
    assert res.users == ("u1", "u2") and res.method == "brute"
    assert res.status == pytest.approx(m.pooled_status(("u1", "u2")))
    assert res.status > 95


def test_brute_k_equals_n_and_k_one(quad):
    m = _complementary(quad)
    assert m.comb_user_selection(4).status == m.pooled_status(("u1", "u2", "u3", "u4"))
    best = max(m.status_user(u).status for u in ("u1", "u2", "u3", "u4"))
    assert m.comb_user_selection(1).status == best


def test_brute_cap(quad):
    src, val, _ = quad
    m = IGMonitor(src, val, comb_cap=5)
    for i in range(6):
        feed(m, f"u{i}", src, [[0.1, 0.1], [0.9, 0.9]])
    with pytest.raises(CollusionError, match="greedy"):
        m.comb_user_selection(3)


def test_greedy_k1_equals_brute_k1(quad):
    m = _complementary(quad)
    g, b = m.greedy_user_selection(1), m.comb_user_selection(1)
    assert g.users == b.users and g.status == b.status


def test_greedy_not_above_brute(quad):
    m = _complementary(quad)
    for k in (1, 2, 3, 4):
        assert m.greedy_user_selection(k).status <= m.comb_user_selection(k).status + 1e-12


def test_duplicate_user_adds_zero_marginal_gain(quad):
    src, _, m = quad
    X = np.random.default_rng(6).uniform(size=(200, 2))
    feed(m, "a", src, X)
    feed(m, "b", src, X)
    one, two = m.greedy_user_selection(1), m.greedy_user_selection(2)
    assert two.status == one.status
    assert set(two.users) == {"a", "b"}


def test_greedy_all_zero_gain_selects_nobody(quad):
    src, _, m = quad
    feed(m, "a", src, [[0.1, 0.1]])
    feed(m, "b", src, [[0.2, 0.2]])
    res = m.greedy_user_selection(2)
    assert res.users == () and res.status == 0.0


def test_pooling_can_lower_ig_status():
    """More pooled points can re-route the greedy tree so it partitions S less finely."""
    rng = np.random.default_rng(290)
    src = random_tree(unit_schema(2), int(rng.integers(2, 12)), ["a", "b", "c"], rng)
    val = labeled_sample(src, 100, rng)
    m = IGMonitor(src, val)
    for u in "ABC":
        feed(m, u, src, rng.uniform(size=(int(rng.integers(1, 25)), 2)))
    assert m.pooled_status(("A", "B")) < m.pooled_status(("A",)) - 1
    assert m.pooled_status(("A", "B", "C")) < m.pooled_status(("A", "B")) - 1


def test_snapshot_isolation(quad):
    src, _, m = quad
    X = np.random.default_rng(7).uniform(size=(100, 2))
    feed(m, "u", src, X[:50])
    snap = m.snapshot()
    feed(m, "u", src, X[50:])
    assert m.pooled_status(("u",), snap) == m.pooled_status(("u",), {"u": 50})
    assert m.snapshot() == {"u": 100}


def test_source_gain_cached(quad):
    src, val, m = quad
    assert m.source_gain == ig_tree(val, src)
