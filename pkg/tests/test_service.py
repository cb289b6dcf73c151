import json
import socket
import threading

import numpy as np
import pytest

from builders import dataset_from, seven_leaf_tree
from extwarn.dataset import split
from extwarn.runner import build_monitor, replay
from extwarn.service import PredictionService, RemoteOracle, ServiceError, parse_address, serve


def make_monitor(src, every=None, strategy="both"):
    tr, _, va = split(dataset_from(src, 2000, 0), seed=0)
    return build_monitor(src, strategy, (1, 2), 30, train_set=tr, validation=va, every=every)


@pytest.fixture
def server():
    src = seven_leaf_tree()
    srv = serve(src, make_monitor(src, every=20))
    srv.start()
    yield src, srv
    srv.shutdown()
    srv.server_close()


def test_reply_carries_leaf_id(server):
    src, srv = server
    with RemoteOracle(srv.server_address) as o:
        for x in ([0.1, 0.1], [0.9, 0.9], [0.6, 0.5]):
            assert o(x) == src.predict(x)


def test_malformed_request_keeps_connection(server):
    _, srv = server
    with socket.create_connection(srv.server_address, timeout=10) as s:
        f = s.makefile("rw", encoding="utf-8", newline="\n")
        for line in ("{not json", '{"user_id": "u"}', '{"cmd": "nope"}', '[1, 2]',
                     '{"user_id": "u", "features": [0.1]}', '{"user_id": "u", "features": ["nan", 0.1]}',
                     '{"user_id": "u", "features": [1.5, 0.1]}',
                     '{"cmd": "status", "k": 0}'):
            f.write(line + "\n")
            f.flush()
            assert "error" in json.loads(f.readline())
        f.write(json.dumps({"user_id": "u", "features": [0.1, 0.1]}) + "\n")
        f.flush()
        assert json.loads(f.readline()) == {"class": "A", "leaf_id": 0}


def test_control_commands(server):
    _, srv = server
    with RemoteOracle(srv.server_address) as o:
        for x in np.random.default_rng(0).uniform(size=(40, 2)):
            o(x)
        st = o.status(2)
        assert st["query_count"] == 40 and set(st["results"]) == {"ig", "summary"}
        assert st["results"]["summary"]["k"] == 2
        assert isinstance(o.warnings(), list)
        assert o.summaries()[0]["user_id"] == "user0"


def test_summaries_need_summary_monitor():
    src = seven_leaf_tree()
    svc = PredictionService(src, make_monitor(src, strategy="ig"))
    assert "not enabled" in json.loads(svc.handle_line('{"cmd": "summaries"}'))["error"]
    with pytest.raises(ServiceError):
        svc.handle({"cmd": "summaries"})


def test_concurrent_clients(server):
    _, srv = server
    X = np.random.default_rng(1).uniform(size=(4, 50, 2))

    def client(i):
        with RemoteOracle(srv.server_address, user_id=f"c{i}") as o:
            for x in X[i]:
                o(x)

    threads = [threading.Thread(target=client, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert srv.service.monitor.query_count == 200
    assert set(srv.service.monitor.monitors["ig"].logs) == {"c0", "c1", "c2", "c3"}


def test_service_matches_offline_replay(server):
    src, srv = server
    rng = np.random.default_rng(2)
    log = []
    clients = {u: RemoteOracle(srv.server_address, user_id=u) for u in ("a", "b", "c")}
    for i in range(300):
        u = "abc"[int(rng.integers(3))]
        x = rng.uniform(size=2) * [0.5, 1] if u == "a" else rng.uniform(size=2)
        log.append((u, x, clients[u](x)))
    offline = make_monitor(src, every=20)
    events = replay(log, offline)
    with clients["a"] as o:
        for k in (1, 2):
            remote = o.status(k)["results"]
            local = offline.collusion(k)
            for s in ("ig", "summary"):
                assert remote[s]["status"] == pytest.approx(local[s].status, abs=1e-9)
                assert tuple(remote[s]["users"]) == local[s].users
        assert [json.dumps(e, sort_keys=True) for e in o.warnings()] == [e.dumps() for e in events]
    for c in clients.values():
        c.close()


@pytest.mark.parametrize("text,expected", [("127.0.0.1:80", ("127.0.0.1", 80)), (":9000", ("127.0.0.1", 9000))])
def test_parse_address(text, expected):
    assert parse_address(text) == expected


def test_parse_address_error():
    with pytest.raises(ValueError):
        parse_address("localhost")
