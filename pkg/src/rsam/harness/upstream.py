"""Scriptable mock upstream service.

Behavior is driven per route by a fault script posted to ``/__fault``:
reachability, status code, injected latency and deterministic response
bodies. Every executed request increments an invocation counter keyed by
the caller's base_key, which is what makes at-most-once, forced-bypass and
dedup properties directly observable from tests.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import socket
import threading
import time
from dataclasses import dataclass, field, asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

logger = logging.getLogger("rsam.harness.upstream")

MAX_BODY_BYTES = 64 * 1024 * 1024
RESPONSE_BYTES_HEADER = "X-Bench-Response-Bytes"


def deterministic_payload(n: int) -> bytes:
    """n bytes that depend only on n, cheap to generate at any size."""
    if n <= 0:
        return b""
    block = hashlib.sha256(str(n).encode()).digest()
    return (block * (n // len(block) + 1))[:n]


@dataclass
class RouteDirective:
    reachable: bool = True
    status: int = 200
    latency_ms: int = 0
    body_bytes: int | None = None  # None -> echo a JSON summary
    content_type: str = "application/octet-stream"
    # Interpreted by the harness supervisor, not by this server: when set,
    # the gateway is crashed after it forwards to this route.
    crash_gateway_after_forward: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "RouteDirective":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class FaultScript:
    default: RouteDirective = field(default_factory=RouteDirective)
    routes: dict[str, RouteDirective] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "FaultScript":
        return cls(
            default=RouteDirective.from_dict(data.get("default", {})),
            routes={
                path: RouteDirective.from_dict(d)
                for path, d in data.get("routes", {}).items()
            },
        )

    def to_dict(self) -> dict:
        return {
            "default": asdict(self.default),
            "routes": {p: asdict(d) for p, d in self.routes.items()},
        }

    def directive_for(self, path: str) -> RouteDirective:
        best: tuple[int, RouteDirective] | None = None
        for prefix, directive in self.routes.items():
            if path.startswith(prefix) and (best is None or len(prefix) > best[0]):
                best = (len(prefix), directive)
        return best[1] if best else self.default


class MockUpstream(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr):
        super().__init__(addr, UpstreamHandler)
        self.script = FaultScript()
        self.counters_lock = threading.Lock()
        self.by_key: dict[str, int] = {}
        self.by_path: dict[str, int] = {}
        self.total = 0

    def count(self, key: str, path: str) -> int:
        with self.counters_lock:
            self.by_key[key] = self.by_key.get(key, 0) + 1
            self.by_path[path] = self.by_path.get(path, 0) + 1
            self.total += 1
            return self.by_key[key]

    def stats(self) -> dict:
        with self.counters_lock:
            return {"total": self.total, "by_key": dict(self.by_key), "by_path": dict(self.by_path)}

    def reset_counters(self) -> None:
        with self.counters_lock:
            self.by_key.clear()
            self.by_path.clear()
            self.total = 0


class UpstreamHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    rbufsize = 1 << 18

    server: MockUpstream

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes, content_type: str) -> None:
        try:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            if body and self.command != "HEAD":
                self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            self.close_connection = True

    def _read_body(self) -> bytes:
        length = min(int(self.headers.get("Content-Length") or 0), MAX_BODY_BYTES)
        return self.rfile.read(length) if length else b""

    def _route(self) -> None:
        parsed = urlsplit(self.path)
        path = parsed.path

        if path == "/__fault" and self.command == "POST":
            payload = json.loads(self._read_body() or b"{}")
            self.server.script = FaultScript.from_dict(payload)
            if payload.get("reset_counters"):
                self.server.reset_counters()
            self._send(200, json.dumps({"ok": True}).encode(), "application/json")
            return

        if path == "/__stats" and self.command == "GET":
            self._send(200, json.dumps(self.server.stats()).encode(), "application/json")
            return

        if path == "/__health" and self.command == "GET":
            self._send(200, b'{"ok": true}', "application/json")
            return

        directive = self.server.script.directive_for(path)
        if not directive.reachable:
            # Service unreachable: hard-close without a response and without
            # counting an invocation -- the request never "executed".
            self.close_connection = True
            try:
                self.connection.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            return

        rsam_id = self.headers.get("X-RSAM-Client-Id")
        key = rsam_id.rsplit(":", 2)[0] if rsam_id else "-"
        body = self._read_body()
        count = self.server.count(key, path)

        if directive.latency_ms:
            time.sleep(directive.latency_ms / 1000.0)

        size_header = self.headers.get(RESPONSE_BYTES_HEADER)
        n = directive.body_bytes
        if size_header is not None:
            n = min(int(size_header), MAX_BODY_BYTES)
        if n is not None:
            self._send(directive.status, deterministic_payload(n), directive.content_type)
            return

        query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        summary = {
            "method": self.command,
            "path": path,
            "query": query,
            "received_bytes": len(body),
            "invocation": count,
            "rsam_header": rsam_id is not None,
        }
        self._send(directive.status, json.dumps(summary).encode(), "application/json")

    do_GET = _route
    do_POST = _route
    do_PUT = _route
    do_PATCH = _route
    do_DELETE = _route
    do_HEAD = _route
    do_OPTIONS = _route


def start_in_thread(host: str = "127.0.0.1", port: int = 0) -> tuple[MockUpstream, threading.Thread]:
    server = MockUpstream((host, port))
    thread = threading.Thread(target=server.serve_forever, name="mock-upstream", daemon=True)
    thread.start()
    return server, thread


def main(argv: list[str] | None = None) -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    parser = argparse.ArgumentParser(prog="rsam-mock-upstream", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, required=True)
    args = parser.parse_args(argv)
    server = MockUpstream((args.host, args.port))
    logger.info("mock upstream on http://%s:%s", args.host, args.port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


if __name__ == "__main__":
    main()
