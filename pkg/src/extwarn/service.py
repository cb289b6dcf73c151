"""Newline-delimited JSON prediction service with an attached extraction monitor.

Requests, one JSON object per line:

* ``{"user_id": str, "features": [...]}`` -> ``{"class": str, "leaf_id": int}``
* ``{"cmd": "status", "k": int}`` -> ``{"results": {strategy: CollusionResult}}``
* ``{"cmd": "warnings"}`` -> ``{"events": [WarningEvent, ...]}``
* ``{"cmd": "summaries"}`` -> ``{"summaries": [...]}`` (summary monitor only)

Anything else gets ``{"error": "..."}`` and the connection stays open.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading

import numpy as np

from .monitor import ExtractionMonitor
from .tree import DecisionTree, Prediction

log = logging.getLogger(__name__)


class ServiceError(ValueError):
    pass


class PredictionService:
    """Transport-independent request handling, usable without a socket."""

    def __init__(self, source: DecisionTree, monitor: ExtractionMonitor):
        self.source = source
        self.monitor = monitor

    def handle(self, msg) -> dict:
        if not isinstance(msg, dict):
            raise ServiceError("request must be a JSON object")
        if "cmd" in msg:
            return self._control(msg)
        user, features = msg.get("user_id"), msg.get("features")
        if not isinstance(user, str) or not user:
            raise ServiceError("user_id must be a non-empty string")
        if not isinstance(features, list):
            raise ServiceError("features must be a list")
        x = self.source.schema.encode(features)
        if not np.all(np.isfinite(x)):
            raise ServiceError("features must be finite")
        for j in self.source.schema.continuous_indices:
            lo, hi = self.source.schema[j].bounds
            if not lo <= x[j] <= hi:
                raise ServiceError(f"feature {self.source.schema[j].name!r}: {x[j]} outside bounds [{lo}, {hi}]")
        pred = self.source.predict(x)
        self.monitor.observe(user, x, pred)
        return {"class": pred.label, "leaf_id": pred.leaf_id}

    def _control(self, msg: dict) -> dict:
        cmd = msg["cmd"]
        if cmd == "status":
            k = msg.get("k", 1)
            if isinstance(k, bool) or not isinstance(k, int) or k < 1:
                raise ServiceError("k must be a positive integer")
            return {"results": {s: r.to_json() for s, r in self.monitor.collusion(k).items()},
                    "query_count": self.monitor.query_count}
        if cmd == "warnings":
            return {"events": [e.to_json() for e in self.monitor.events]}
        if cmd == "summaries":
            m = self.monitor.monitors.get("summary")
            if m is None:
                raise ServiceError("summary monitor is not enabled")
            return {"summaries": m.dump()}
        raise ServiceError(f"unknown cmd {cmd!r}")

    def handle_line(self, line: str) -> str:
        try:
            reply = self.handle(json.loads(line))
        except json.JSONDecodeError as e:
            reply = {"error": f"malformed JSON: {e.msg}"}
        except (ValueError, KeyError, TypeError) as e:
            reply = {"error": str(e)}
        except Exception as e:  # keep the connection alive on internal faults
            log.exception("request failed")
            reply = {"error": f"internal error: {type(e).__name__}"}
        return json.dumps(reply, sort_keys=True)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service: PredictionService = self.server.service
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            self.wfile.write((service.handle_line(line) + "\n").encode("utf-8"))
            self.wfile.flush()


class Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, service: PredictionService):
        self.service = service
        super().__init__(address, _Handler)

    def start(self) -> threading.Thread:
        """Serve on a background thread; stop with ``shutdown()`` then ``server_close()``."""
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


def serve(source: DecisionTree, monitor: ExtractionMonitor, host: str = "127.0.0.1", port: int = 0) -> Server:
    server = Server((host, port), PredictionService(source, monitor))
    log.info("serving on %s:%d", *server.server_address[:2])
    return server


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


class RemoteOracle:
    """Client side of the wire protocol; callable like a local oracle."""

    def __init__(self, address, user_id: str = "user0", schema=None, timeout: float = 30.0):
        if isinstance(address, str):
            address = parse_address(address)
        self.user_id = user_id
        self.schema = schema
        self._sock = socket.create_connection(address, timeout=timeout)
        self._r = self._sock.makefile("r", encoding="utf-8", newline="\n")
        self._w = self._sock.makefile("w", encoding="utf-8", newline="\n")

    def request(self, msg: dict) -> dict:
        self._w.write(json.dumps(msg) + "\n")
        self._w.flush()
        line = self._r.readline()
        if not line:
            raise ServiceError("connection closed by server")
        return json.loads(line)

    def _call(self, msg: dict) -> dict:
        reply = self.request(msg)
        if "error" in reply:
            raise ServiceError(reply["error"])
        return reply

    def __call__(self, x, user_id: str | None = None) -> Prediction:
        if self.schema is not None:
            features = self.schema.decode(np.asarray(x, dtype=float))
        else:
            features = [float(v) for v in x]
        reply = self._call({"user_id": user_id or self.user_id, "features": features})
        return Prediction(reply["class"], int(reply["leaf_id"]))

    def status(self, k: int = 1) -> dict:
        return self._call({"cmd": "status", "k": k})

    def warnings(self) -> list[dict]:
        return self._call({"cmd": "warnings"})["events"]

    def summaries(self) -> list[dict]:
        return self._call({"cmd": "summaries"})["summaries"]

    def close(self) -> None:
        for f in (self._r, self._w, self._sock):
            try:
                f.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
