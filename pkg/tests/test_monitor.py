import itertools
import json
import threading

import numpy as np
import pytest

from builders import UNIT2, dataset_from
from extwarn.dataset import Dataset
from extwarn.monitor import ExtractionMonitor, WarningEvent, extraction_warning_loop
from extwarn.strategy1 import IGMonitor
from extwarn.strategy2 import SummaryMonitor
from extwarn.tree import DecisionTree, Node


def quadrants() -> DecisionTree:
    n = [Node(feature=0, threshold=0.5, left=1, right=4),
         Node(feature=1, threshold=0.5, left=2, right=3), Node(leaf_id=0, label="A"), Node(leaf_id=1, label="B"),
         Node(feature=1, threshold=0.5, left=5, right=6), Node(leaf_id=2, label="C"), Node(leaf_id=3, label="D")]
    return DecisionTree(UNIT2, ["A", "B", "C", "D"], n)


def stream(src, user, X):
    return [(user, x, src.predict(x)) for x in X]


def summary_monitor(src):
    X = np.random.default_rng(0).uniform(size=(400, 2))
    return SummaryMonitor.from_training(src, Dataset(UNIT2, X, src.predict_class_index(X), src.classes))


def test_ramping_adversary_single_first_crossing():
    src = quadrants()
    m = IGMonitor(src, dataset_from(src, 400, 0))
    X = np.random.default_rng(1).uniform(size=(400, 2))
    events = list(extraction_warning_loop(m, stream(src, "u", X), k=1, p=50, every=10))
    assert events
    firsts = [e for e in events if e.first]
    assert len(firsts) == 1 and firsts[0] is events[0] and firsts[0].status >= 50
    assert all(e.status >= 50 and e.ts % 10 == 0 for e in events)


def test_unreachable_threshold_never_fires():
    src = quadrants()
    m = summary_monitor(src)
    X = np.random.default_rng(2).uniform(size=(500, 2))
    assert list(extraction_warning_loop(m, stream(src, "u", X), k=1, p=100 + 1e-6, every=25)) == []


def _halves(src, rng):
    left = rng.uniform(size=(300, 2)) * [0.5, 1]
    right = rng.uniform(size=(300, 2)) * [0.5, 1] + [0.5, 0]
    # interleave so both users ramp together
    return [t for pair in zip(stream(src, "u1", left), stream(src, "u2", right)) for t in pair]


def test_warning_fires_only_for_the_pair():
    src = quadrants()
    s = _halves(src, np.random.default_rng(3))
    m = summary_monitor(src)
    for u, x, p in s:
        m.observe(u, x, p)
    single = max(m.status_user(u).status for u in ("u1", "u2"))
    joint = m.pooled_status(("u1", "u2"))
    p = (single + joint) / 2
    assert single < p < joint
    assert list(extraction_warning_loop(summary_monitor(src), s, k=1, p=p, every=50)) == []
    events = list(extraction_warning_loop(summary_monitor(src), s, k=2, p=p, every=50))
    assert events and all(e.users == ("u1", "u2") for e in events)


def test_seconds_interval_with_fake_clock():
    src = quadrants()
    m = IGMonitor(src, dataset_from(src, 400, 0))
    ticks = itertools.count(0.0, 0.5)
    X = np.random.default_rng(4).uniform(size=(200, 2))
    events = list(extraction_warning_loop(m, stream(src, "u", X), k=1, p=1, every=None, seconds=10,
                                          clock=lambda: next(ticks)))
    # the clock advances 0.5 per call: a checkpoint every 20 queries
    assert [e.ts for e in events] == list(range(20, 201, 20))


@pytest.mark.parametrize("kwargs", [dict(p=0, every=5), dict(p=50, every=None), dict(p=50, every=5, seconds=1)])
def test_loop_argument_errors(kwargs):
    src = quadrants()
    with pytest.raises(ValueError):
        list(extraction_warning_loop(summary_monitor(src), [], k=1, **kwargs))


def test_event_json():
    e = WarningEvent(7, "ig", ("a", "b"), 61.5, 2, 50.0, True)
    assert json.loads(e.dumps()) == {"ts": 7, "strategy": "ig", "users": ["a", "b"], "status": 61.5, "k": 2,
                                     "threshold": 50.0, "first": True}


def _combined(src, every=None, k_list=(1, 2)):
    return ExtractionMonitor([IGMonitor(src, dataset_from(src, 400, 0)), summary_monitor(src)], k_list=k_list,
                             threshold=40, every=every)


def test_extraction_monitor_checkpoints_every_n():
    src = quadrants()
    em = _combined(src, every=100)
    for u, x, p in _halves(src, np.random.default_rng(5)):
        em.observe(u, x, p)
    assert em.query_count == 600
    assert {e.ts for e in em.events} <= set(range(100, 601, 100))
    for key in {(e.strategy, e.k) for e in em.events}:
        assert sum(e.first for e in em.events if (e.strategy, e.k) == key) == 1


def test_extraction_monitor_needs_a_monitor():
    with pytest.raises(ValueError):
        ExtractionMonitor([])


def test_concurrent_observe_matches_serial():
    src = quadrants()
    rng = np.random.default_rng(6)
    per_user = {f"u{i}": stream(src, f"u{i}", rng.uniform(size=(150, 2))) for i in range(6)}
    serial = _combined(src)
    for s in per_user.values():
        for t in s:
            serial.observe(*t)
    conc = _combined(src)
    threads = [threading.Thread(target=lambda s=s: [conc.observe(*t) for t in s]) for s in per_user.values()]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert conc.query_count == serial.query_count == 900
    for k in (1, 2):
        a, b = serial.collusion(k), conc.collusion(k)
        for strategy in a:
            assert a[strategy].status == pytest.approx(b[strategy].status, abs=1e-9)
            assert a[strategy].users == b[strategy].users
