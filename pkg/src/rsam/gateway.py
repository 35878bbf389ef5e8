"""HTTP middleware gateway.

Sits between consumers and one upstream service: filters against an
allow-list, validates the client id, persists the request before forwarding
(write-ahead), deduplicates by base_key, caches successful responses and
replays them byte-identically, and exposes a management API for inspecting,
retrying and deleting stored requests.
"""

from __future__ import annotations

import argparse
import json
import logging
import mimetypes
import os
import re
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlsplit

import requests

from .protocol import (
    ClockSkew,
    DecisionKind,
    Lifecycle,
    LifecycleEvent,
    MalformedId,
    OutcomeState,
    body_digest,
    decide,
    method_idempotent,
    transition,
    validate_id,
)
from .store import (
    RequestRecord,
    RequestStore,
    ResponseOutcome,
    ResponseRecord,
    outcome_for_status,
)
from .util import now_ms

logger = logging.getLogger("rsam.gateway")

DEFAULT_MAX_BODY_BYTES = 16 * 1024 * 1024
DEFAULT_UPSTREAM_TIMEOUT_MS = 45_000
DEFAULT_MAX_SKEW_MS = 5 * 60 * 1000
CRASH_AFTER_FORWARD = "after-forward-before-response"

HOP_BY_HOP = {
    "host",
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "trailers",
    "transfer-encoding",
    "upgrade",
    "content-length",
}


class UpstreamError(Exception):
    pass


class UpstreamUnreachable(UpstreamError):
    pass


class UpstreamTimeout(UpstreamError):
    pass


class NotFound(Exception):
    pass


class NotRetryable(Exception):
    pass


# ---------------------------------------------------------------------------
# allow-list


@dataclass(frozen=True)
class AllowRule:
    method: str
    pattern: str
    prefix: bool

    def matches(self, method: str, path: str) -> bool:
        if method != self.method:
            return False
        if self.prefix:
            return path.startswith(self.pattern)
        return path == self.pattern


class AllowList:
    """Request filter: exact on method, exact-or-prefix on path.

    File format is one ``METHOD /path`` per line; a trailing ``*`` turns the
    path into a prefix pattern. Blank lines and ``#`` comments are skipped.
    """

    def __init__(self, rules: list[AllowRule]):
        if not rules:
            raise ValueError("allow-list must not be empty")
        self.rules = rules

    @classmethod
    def load(cls, path: str | Path) -> "AllowList":
        rules = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'METHOD path-pattern'")
            method, pattern = parts[0].upper(), parts[1]
            prefix = pattern.endswith("*")
            if prefix:
                pattern = pattern[:-1]
            rules.append(AllowRule(method=method, pattern=pattern, prefix=prefix))
        return cls(rules)

    def permits(self, method: str, path: str) -> bool:
        return any(rule.matches(method.upper(), path) for rule in self.rules)


# ---------------------------------------------------------------------------
# per-key locking (single-flight)


class _KeyEntry:
    __slots__ = ("lock", "refs", "last_done")

    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.refs = 0
        self.last_done = 0.0  # monotonic time of the last completed forward


class KeyLocks:
    """Mutual exclusion per base_key with completion memos.

    ``last_done`` lets a caller detect that somebody else finished a forward
    for the same key while it was waiting, so concurrent duplicates collapse
    to a single upstream execution and the losers observe the winner's
    outcome instead of re-forwarding.
    """

    def __init__(self) -> None:
        self._mu = threading.Lock()
        self._entries: dict[str, _KeyEntry] = {}

    @contextmanager
    def hold(self, key: str):
        with self._mu:
            entry = self._entries.get(key)
            if entry is None:
                entry = _KeyEntry()
                self._entries[key] = entry
            entry.refs += 1
        entry.lock.acquire()
        try:
            yield entry
        finally:
            entry.lock.release()
            with self._mu:
                entry.refs -= 1
                if entry.refs == 0:
                    self._entries.pop(key, None)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class GatewayConfig:
    listen_host: str
    listen_port: int
    upstream_base_url: str
    allow_list: AllowList
    store_dir: str
    upstream_timeout_ms: int = DEFAULT_UPSTREAM_TIMEOUT_MS
    cache_ttl_s: float | None = None
    max_body_bytes: int = DEFAULT_MAX_BODY_BYTES
    max_skew_ms: int = DEFAULT_MAX_SKEW_MS
    dashboard_dir: Path | None = None
    test_hooks: bool = False


@dataclass
class ProxyReply:
    """Transport-agnostic result of one proxied request."""

    status: int
    body: bytes = b""
    state: str | None = None  # value for the X-RSAM-State header
    base_key: str | None = None
    message: str | None = None
    content_type: str | None = None


def _json_reply(status: int, payload: dict, **kw) -> ProxyReply:
    return ProxyReply(
        status=status,
        body=json.dumps(payload).encode(),
        content_type="application/json",
        **kw,
    )


# ---------------------------------------------------------------------------
# core gateway logic (HTTP-free, unit-testable)


class Gateway:
    def __init__(self, config: GatewayConfig, store: RequestStore):
        self.config = config
        self.store = store
        self.locks = KeyLocks()
        self.session = requests.Session()
        adapter = requests.adapters.HTTPAdapter(pool_connections=8, pool_maxsize=32)
        self.session.mount("http://", adapter)
        self.session.mount("https://", adapter)
        self.crash_point: str | None = None
        self._fail_next = 0
        self._hook_lock = threading.Lock()

    # -- test hooks --------------------------------------------------------

    def arm_crash(self, point: str) -> None:
        if point != CRASH_AFTER_FORWARD:
            raise ValueError(f"unsupported crash point {point!r}")
        self.crash_point = point
        logger.warning("test hook armed: crash %s", point)

    def inject_fail_next(self, count: int = 1) -> None:
        with self._hook_lock:
            self._fail_next += count

    def _consume_fail_next(self) -> bool:
        with self._hook_lock:
            if self._fail_next > 0:
                self._fail_next -= 1
                return True
        return False

    # -- proxy path --------------------------------------------------------

    def proxy(self, method: str, target: str, headers: dict[str, str], body: bytes) -> ProxyReply:
        """Filter -> parse -> validate -> persist -> decide -> act -> reply."""
        if self._consume_fail_next():
            # Simulated internal middleware failure: no state header on
            # purpose, so clients classify it as a middleware malfunction.
            return _json_reply(500, {"error": "injected middleware failure"})

        method = method.upper()
        path_only = target.split("?", 1)[0]
        if not self.config.allow_list.permits(method, path_only):
            return _json_reply(
                403,
                {"error": "method/path not in the allow-list"},
                state=OutcomeState.FAILED.value,
                message="filter rejected",
            )

        raw_id = headers.get("x-rsam-client-id")
        if raw_id is None:
            return _json_reply(
                400,
                {"error": "missing X-RSAM-Client-Id header"},
                state=OutcomeState.FAILED.value,
                message="missing client id",
            )
        try:
            cid = validate_id(raw_id, now_ms(), self.config.max_skew_ms)
        except MalformedId as exc:
            return _json_reply(
                400,
                {"error": f"malformed client id: {exc}"},
                state=OutcomeState.FAILED.value,
                message=str(exc),
            )
        except ClockSkew as exc:
            return _json_reply(
                400,
                {"error": f"client clock skew: {exc}"},
                state=OutcomeState.FAILED.value,
                message=str(exc),
            )

        descriptor_forced = headers.get("x-rsam-forced") == "1"
        forced = cid.forced or descriptor_forced
        # The wire carries no idempotency flag; classify by method.
        idempotent = method_idempotent(method)
        digest = body_digest(body)
        base_key = cid.base_key

        arrived = time.monotonic()
        with self.locks.hold(base_key) as entry:
            if entry.last_done > arrived and not forced:
                # Someone else completed a forward for this key while we were
                # queued behind them: observe their outcome, don't re-execute.
                reply = self._serve_completed(base_key)
                if reply is not None:
                    logger.info("proxy %s %s key=%s coalesced -> %s", method, target, base_key, reply.state)
                    return reply

            stored = self.store.get_request(base_key)
            has_success = stored is not None and self._cached_success(base_key) is not None
            matches = stored is None or (
                stored.body_digest == digest
                and stored.target_path == target
                and stored.method == method
            )
            decision = decide(
                stored.lifecycle if stored else None,
                has_success,
                cid.forced,
                descriptor_forced,
                idempotent,
                matches,
            )
            logger.info("proxy %s %s key=%s trial=%s decision=%s", method, target, base_key, cid.trial, decision.value)

            if decision is DecisionKind.FORWARD_FIRST_TIME:
                now = now_ms()
                rec = RequestRecord(
                    base_key=base_key,
                    device_id=cid.device_id,
                    method=method,
                    target_path=target,
                    body_digest=digest,
                    body=body,
                    lifecycle=Lifecycle.RECEIVED,
                    trial_count=cid.trial,
                    forced=forced,
                    created_at=now,
                )
                self.store.put_request(rec)  # write-ahead: persist before forwarding
                rec.lifecycle = transition(rec.lifecycle, LifecycleEvent.FORWARD)
                self.store.set_lifecycle(base_key, rec.lifecycle, forwarded_at=now_ms())
                return self._forward_and_reply(rec, headers, entry)

            if decision is DecisionKind.FORWARD_RETRY:
                assert stored is not None
                trial = max(stored.trial_count, cid.trial)
                stored.trial_count = trial
                if stored.lifecycle is Lifecycle.SUCCEEDED:
                    # Forced or TTL-expired re-execution of a finished record:
                    # SUCCEEDED is terminal, so the state stays put and only a
                    # fresh response row is appended.
                    self.store.set_lifecycle(
                        base_key, stored.lifecycle, forwarded_at=now_ms(), trial_count=trial
                    )
                else:
                    event = (
                        LifecycleEvent.FORWARD
                        if stored.lifecycle is Lifecycle.RECEIVED
                        else LifecycleEvent.RETRY
                    )
                    stored.lifecycle = transition(stored.lifecycle, event)
                    self.store.set_lifecycle(
                        base_key, stored.lifecycle, forwarded_at=now_ms(), trial_count=trial
                    )
                return self._forward_and_reply(stored, headers, entry)

            if decision is DecisionKind.SERVE_CACHED:
                cached = self._cached_success(base_key)
                assert cached is not None
                self.store.bump_trial(base_key, cid.trial)
                return ProxyReply(
                    status=cached.status_code,
                    body=cached.body,
                    state=OutcomeState.CACHED.value,
                    base_key=base_key,
                    content_type=cached.content_type or None,
                )

            if decision is DecisionKind.DOUBT:
                self.store.bump_trial(base_key, cid.trial)
                return ProxyReply(
                    status=409,
                    state=OutcomeState.DOUBT.value,
                    base_key=base_key,
                    message=(
                        "the outcome of an earlier attempt is unknown;"
                        " inspect or retry it via the management API"
                    ),
                )

            # REJECT_INVALID: same base_key, different request. Duplicate-risk
            # condition surfaced as doubt with a distinguishing message.
            return ProxyReply(
                status=422,
                state=OutcomeState.DOUBT.value,
                base_key=base_key,
                message="stored request with this id differs (digest/target mismatch)",
            )

    def _serve_completed(self, base_key: str) -> ProxyReply | None:
        cached = self._cached_success(base_key)
        if cached is not None:
            return ProxyReply(
                status=cached.status_code,
                body=cached.body,
                state=OutcomeState.CACHED.value,
                base_key=base_key,
                content_type=cached.content_type or None,
            )
        stored = self.store.get_request(base_key)
        if stored is not None and stored.lifecycle is Lifecycle.FAILED:
            last = self.store.latest_response(base_key)
            if last is not None:
                return ProxyReply(
                    status=last.status_code,
                    body=last.body,
                    state=OutcomeState.FAILED.value,
                    base_key=base_key,
                    content_type=last.content_type or None,
                )
            return _json_reply(
                502,
                {"error": "upstream unreachable (observed from a concurrent attempt)"},
                state=OutcomeState.FAILED.value,
                base_key=base_key,
                message="upstream unreachable",
            )
        return None  # fall through to the normal decision path

    def _cached_success(self, base_key: str) -> ResponseRecord | None:
        not_before = None
        if self.config.cache_ttl_s is not None:
            not_before = now_ms() - int(self.config.cache_ttl_s * 1000)
        return self.store.latest_succeeded_response(base_key, not_before=not_before)

    def _forward_and_reply(
        self, rec: RequestRecord, headers: dict[str, str], entry: _KeyEntry
    ) -> ProxyReply:
        try:
            resp = self.forward_upstream(rec, passthrough_headers=headers)
        except UpstreamError as exc:
            if rec.lifecycle is not Lifecycle.SUCCEEDED:
                self.store.set_lifecycle(
                    rec.base_key,
                    transition(Lifecycle.FORWARDED, LifecycleEvent.UPSTREAM_ERR),
                    completed_at=now_ms(),
                )
            entry.last_done = time.monotonic()
            status = 504 if isinstance(exc, UpstreamTimeout) else 502
            logger.warning("upstream failed for key=%s: %s", rec.base_key, exc)
            return _json_reply(
                status,
                {"error": str(exc)},
                state=OutcomeState.FAILED.value,
                base_key=rec.base_key,
                message=str(exc),
            )
        entry.last_done = time.monotonic()
        state = (
            OutcomeState.SUCCEEDED
            if resp.outcome is ResponseOutcome.SUCCESS
            else OutcomeState.FAILED
        )
        return ProxyReply(
            status=resp.status_code,
            body=resp.body,
            state=state.value,
            base_key=rec.base_key,
            content_type=resp.content_type or None,
        )

    def forward_upstream(
        self,
        rec: RequestRecord,
        *,
        passthrough_headers: dict[str, str] | None = None,
    ) -> ResponseRecord:
        """Consume the upstream service and persist whatever comes back.

        The caller must already have persisted the FORWARDED transition;
        that ordering is what makes an unknown outcome detectable later.
        Any HTTP response (success or error status) is persisted and advances
        the lifecycle; transport failures leave the record in FORWARDED and
        raise so the caller can mark it FAILED explicitly.
        """
        url = self.config.upstream_base_url.rstrip("/") + rec.target_path
        fwd_headers = {}
        if passthrough_headers:
            fwd_headers = {
                k: v for k, v in passthrough_headers.items() if k.lower() not in HOP_BY_HOP
            }
        # Reconstruct the wire id so the upstream side can be audited per key.
        fwd_headers["X-RSAM-Client-Id"] = f"{rec.base_key}:{rec.trial_count}:{int(rec.forced)}"
        timeout = self.config.upstream_timeout_ms / 1000.0
        try:
            resp = self.session.request(
                rec.method,
                url,
                headers=fwd_headers,
                data=rec.body or None,
                timeout=timeout,
                allow_redirects=False,
                stream=True,
            )
            # One large read instead of chunk iteration; noticeably faster
            # for multi-MiB bodies and byte-identical either way.
            upstream_body = resp.raw.read(decode_content=True)
            resp.close()
        except requests.exceptions.Timeout as exc:
            raise UpstreamTimeout(f"upstream timed out after {timeout}s") from exc
        except requests.exceptions.ConnectionError as exc:
            raise UpstreamUnreachable("upstream unreachable") from exc

        if self.crash_point == CRASH_AFTER_FORWARD:
            # Simulated gateway crash inside the doubt window: the upstream
            # has executed but its outcome is never persisted.
            logger.warning("test hook firing: exiting before response persist")
            os._exit(86)

        record = ResponseRecord(
            base_key=rec.base_key,
            status_code=resp.status_code,
            body=upstream_body,
            content_type=resp.headers.get("Content-Type", ""),
            outcome=outcome_for_status(resp.status_code),
            received_at=now_ms(),
            trial=rec.trial_count,
        )
        if rec.lifecycle is Lifecycle.SUCCEEDED:
            new_lifecycle = Lifecycle.SUCCEEDED  # terminal; re-executions don't move it
        else:
            event = (
                LifecycleEvent.UPSTREAM_OK
                if record.outcome is ResponseOutcome.SUCCESS
                else LifecycleEvent.UPSTREAM_ERR
            )
            new_lifecycle = transition(Lifecycle.FORWARDED, event)
        self.store.add_response(record, new_lifecycle, now_ms())
        return record

    # -- management --------------------------------------------------------

    def list_requests(self, device_id: str | None = None, state: str | None = None) -> list[dict]:
        return self.store.list_requests(device_id=device_id, state=state)

    def retry_record(self, base_key: str) -> dict:
        """Operator-initiated replay of a stored request.

        An explicit retry is a human accepting re-execution, so it runs the
        decision function with the forced flag set: doubt-window records are
        re-forwarded rather than bounced back as DOUBT.
        """
        with self.locks.hold(base_key) as entry:
            rec = self.store.get_request(base_key, include_deleted=True)
            if rec is None:
                raise NotFound(base_key)
            if rec.lifecycle in (Lifecycle.SUCCEEDED, Lifecycle.DELETED):
                raise NotRetryable(f"record is {rec.lifecycle.value}")
            decision = decide(rec.lifecycle, False, True, True, method_idempotent(rec.method), True)
            assert decision is DecisionKind.FORWARD_RETRY
            trial = rec.trial_count + 1
            event = (
                LifecycleEvent.FORWARD
                if rec.lifecycle is Lifecycle.RECEIVED
                else LifecycleEvent.RETRY
            )
            rec.lifecycle = transition(rec.lifecycle, event)
            rec.trial_count = trial
            self.store.set_lifecycle(
                base_key, rec.lifecycle, forwarded_at=now_ms(), trial_count=trial
            )
            logger.info("management retry key=%s trial=%s", base_key, trial)
            try:
                resp = self.forward_upstream(rec)
                outcome = (
                    OutcomeState.SUCCEEDED
                    if resp.outcome is ResponseOutcome.SUCCESS
                    else OutcomeState.FAILED
                )
            except UpstreamError as exc:
                self.store.set_lifecycle(
                    base_key,
                    transition(Lifecycle.FORWARDED, LifecycleEvent.UPSTREAM_ERR),
                    completed_at=now_ms(),
                )
                outcome = OutcomeState.FAILED
                logger.warning("management retry failed key=%s: %s", base_key, exc)
            entry.last_done = time.monotonic()
        return {"outcome": outcome.value, "record": self.store.summary(base_key)}

    def delete_record(self, base_key: str) -> dict:
        with self.locks.hold(base_key):
            rec = self.store.get_request(base_key, include_deleted=True)
            if rec is None or rec.lifecycle is Lifecycle.DELETED:
                raise NotFound(base_key)
            transition(rec.lifecycle, LifecycleEvent.DELETE)
            self.store.mark_deleted(base_key)
            logger.info("management delete key=%s", base_key)
        return {"deleted": base_key}


# ---------------------------------------------------------------------------
# HTTP surface


_RETRY_RE = re.compile(r"^/rsam/requests/([^/]+)/retry$")
_DELETE_RE = re.compile(r"^/rsam/requests/([^/]+)$")


class RsamHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, gateway: Gateway):
        super().__init__(addr, GatewayHandler)
        self.gateway = gateway


class GatewayHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    rbufsize = 1 << 18

    server: RsamHTTPServer

    # -- plumbing ----------------------------------------------------------

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, headers: dict[str, str], body: bytes) -> None:
        try:
            self.send_response(status)
            for key, value in headers.items():
                self.send_header(key, value)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            if body and self.command != "HEAD":
                self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            # Client gave up (e.g. its timeout fired); the outcome is already
            # persisted, so this is not an error for the gateway.
            self.close_connection = True

    def _send_json(self, status: int, payload: dict) -> None:
        self._send(status, {"Content-Type": "application/json"}, json.dumps(payload).encode())

    def _send_reply(self, reply: ProxyReply) -> None:
        headers = {}
        if reply.content_type:
            headers["Content-Type"] = reply.content_type
        if reply.state:
            headers["X-RSAM-State"] = reply.state
        if reply.base_key:
            headers["X-RSAM-Base-Key"] = reply.base_key
        if reply.message:
            headers["X-RSAM-Message"] = reply.message
        self._send(reply.status, headers, reply.body)

    def _read_body(self) -> bytes | None:
        if self.headers.get("Transfer-Encoding", "").lower() == "chunked":
            self._send_json(400, {"error": "chunked request bodies are not supported"})
            self.close_connection = True
            return None
        length = int(self.headers.get("Content-Length") or 0)
        if length > self.server.gateway.config.max_body_bytes:
            self._send(
                413,
                {
                    "Content-Type": "application/json",
                    "X-RSAM-State": OutcomeState.FAILED.value,
                    "X-RSAM-Message": "body exceeds the stored-request cap",
                },
                json.dumps({"error": "request body too large"}).encode(),
            )
            self.close_connection = True
            return None
        return self.rfile.read(length) if length else b""

    # -- routing -----------------------------------------------------------

    def _route(self) -> None:
        gw = self.server.gateway
        path = self.path

        if path == "/proxy" or path.startswith("/proxy/"):
            body = self._read_body()
            if body is None:
                return
            target = path[len("/proxy"):] or "/"
            headers = {k.lower(): v for k, v in self.headers.items()}
            reply = gw.proxy(self.command, target, headers, body)
            self._send_reply(reply)
            return

        parsed = urlsplit(path)
        route = parsed.path

        if route == "/rsam/health" and self.command == "GET":
            self._send_json(200, {"ok": True})
            return

        if route == "/rsam/requests" and self.command == "GET":
            params = parse_qs(parsed.query)
            items = gw.list_requests(
                device_id=(params.get("device_id") or [None])[0],
                state=(params.get("state") or [None])[0],
            )
            self._send_json(200, {"requests": items})
            return

        match = _RETRY_RE.match(route)
        if match and self.command == "POST":
            self._read_body()
            base_key = unquote(match.group(1))
            try:
                self._send_json(200, gw.retry_record(base_key))
            except NotFound:
                self._send_json(404, {"error": "unknown base_key", "code": "NOT_FOUND"})
            except NotRetryable as exc:
                self._send_json(409, {"error": str(exc), "code": "NOT_RETRYABLE"})
            return

        match = _DELETE_RE.match(route)
        if match and self.command == "DELETE":
            base_key = unquote(match.group(1))
            try:
                self._send_json(200, gw.delete_record(base_key))
            except NotFound:
                self._send_json(404, {"error": "unknown base_key", "code": "NOT_FOUND"})
            return

        if route == "/dashboard" or route.startswith("/dashboard/"):
            self._serve_dashboard(route)
            return

        if route.startswith("/__control/") and self.command == "POST":
            self._handle_control(route)
            return

        self._send_json(404, {"error": f"no route for {self.command} {route}"})

    def _serve_dashboard(self, route: str) -> None:
        root = self.server.gateway.config.dashboard_dir
        if root is None or not root.is_dir():
            self._send_json(404, {"error": "dashboard assets not installed"})
            return
        rel = route[len("/dashboard"):].lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not target.is_relative_to(root.resolve()) or not target.is_file():
            self._send_json(404, {"error": "not found"})
            return
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        self._send(200, {"Content-Type": ctype}, target.read_bytes())

    def _handle_control(self, route: str) -> None:
        gw = self.server.gateway
        if not gw.config.test_hooks:
            self._send_json(403, {"error": "test hooks are disabled"})
            return
        body = self._read_body()
        if body is None:
            return
        if route == "/__control/crash":
            try:
                point = json.loads(body or b"{}").get("point", "")
                gw.arm_crash(point)
            except (ValueError, KeyError) as exc:
                self._send_json(400, {"error": str(exc)})
                return
            self._send_json(200, {"armed": point})
            return
        if route == "/__control/fail-next":
            gw.inject_fail_next()
            self._send_json(200, {"injected": True})
            return
        self._send_json(404, {"error": "unknown control route"})

    do_GET = _route
    do_POST = _route
    do_PUT = _route
    do_PATCH = _route
    do_DELETE = _route
    do_HEAD = _route
    do_OPTIONS = _route


# ---------------------------------------------------------------------------
# CLI


def default_dashboard_dir() -> Path | None:
    candidate = Path(__file__).parent / "dashboard_static"
    return candidate if candidate.is_dir() else None


def build_config(argv: list[str] | None = None) -> GatewayConfig:
    env = os.environ
    parser = argparse.ArgumentParser(prog="rsam-gateway", description=__doc__)
    parser.add_argument("--listen", default=env.get("RSAM_LISTEN", "127.0.0.1:8470"),
                        help="host:port to listen on")
    parser.add_argument("--upstream", default=env.get("RSAM_UPSTREAM"),
                        help="base URL of the upstream service")
    parser.add_argument("--allow-list", default=env.get("RSAM_ALLOW_LIST"),
                        help="path to the allow-list file")
    parser.add_argument("--store", default=env.get("RSAM_STORE"),
                        help="directory for the durable request store")
    parser.add_argument("--timeout-ms", type=int,
                        default=int(env.get("RSAM_TIMEOUT_MS", DEFAULT_UPSTREAM_TIMEOUT_MS)),
                        help="upstream request timeout in milliseconds")
    parser.add_argument("--cache-ttl-s", type=float,
                        default=float(env["RSAM_CACHE_TTL_S"]) if "RSAM_CACHE_TTL_S" in env else None,
                        help="optional TTL for cached responses (default: never expires)")
    parser.add_argument("--max-body-bytes", type=int,
                        default=int(env.get("RSAM_MAX_BODY_BYTES", DEFAULT_MAX_BODY_BYTES)))
    parser.add_argument("--max-skew-ms", type=int,
                        default=int(env.get("RSAM_MAX_SKEW_MS", DEFAULT_MAX_SKEW_MS)))
    parser.add_argument("--dashboard-dir", default=env.get("RSAM_DASHBOARD_DIR"))
    parser.add_argument("--test-hooks", action="store_true",
                        default=env.get("RSAM_TEST_HOOKS") == "1",
                        help="enable crash/failure injection endpoints (testing only)")
    args = parser.parse_args(argv)

    missing = [name for name, val in
               (("--upstream", args.upstream), ("--allow-list", args.allow_list), ("--store", args.store))
               if not val]
    if missing:
        parser.error(f"required: {', '.join(missing)} (or matching RSAM_* env vars)")

    host, _, port = args.listen.rpartition(":")
    dashboard = Path(args.dashboard_dir) if args.dashboard_dir else default_dashboard_dir()
    return GatewayConfig(
        listen_host=host or "127.0.0.1",
        listen_port=int(port),
        upstream_base_url=args.upstream,
        allow_list=AllowList.load(args.allow_list),
        store_dir=args.store,
        upstream_timeout_ms=args.timeout_ms,
        cache_ttl_s=args.cache_ttl_s,
        max_body_bytes=args.max_body_bytes,
        max_skew_ms=args.max_skew_ms,
        dashboard_dir=dashboard,
        test_hooks=args.test_hooks,
    )


def serve(config: GatewayConfig) -> RsamHTTPServer:
    """Construct the server (recovering the store first) without blocking."""
    store = RequestStore(config.store_dir)
    store.recover_on_startup()
    gateway = Gateway(config, store)
    server = RsamHTTPServer((config.listen_host, config.listen_port), gateway)
    return server


def main(argv: list[str] | None = None) -> None:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    config = build_config(argv)
    server = serve(config)
    logger.info(
        "listening on http://%s:%s upstream=%s store=%s",
        config.listen_host,
        config.listen_port,
        config.upstream_base_url,
        config.store_dir,
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


if __name__ == "__main__":
    main()
