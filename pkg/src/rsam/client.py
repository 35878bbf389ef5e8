"""Embeddable reliable-consumption client.

Holds the service registry, generates request identities, routes either
through the middleware gateway or straight to the cloud service, queues
requests while the network or the middleware is unavailable, and adapts
raw HTTP responses into outcome values. The local queue and outcome journal
are durable so one logical user action keeps its identity across process
restarts, client timeouts and retries.
"""

from __future__ import annotations

import json
import logging
import sqlite3
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import requests

from .protocol import (
    ClientRequestId,
    OutcomeState,
    RsamOutcome,
    ServiceDescriptor,
    encode_id,
    generate_client_id,
    parse_id,
)
from .util import now_ms

logger = logging.getLogger("rsam.client")

DEFAULT_TIMEOUT_S = 45.0
DEFAULT_MAX_BODY_BYTES = 16 * 1024 * 1024
JOURNAL_CAP = 1000

Probe = Callable[[], bool]


class ClientError(Exception):
    pass


class UnknownService(ClientError):
    pass


class PayloadTooLarge(ClientError):
    pass


class MissingStateHeader(ClientError):
    """A middleware-routed response arrived without its state header."""


class ServiceRegistry:
    """Descriptor lookup plus the two routing roots."""

    def __init__(self, middleware_url: str, cloud_url: str):
        if not middleware_url or not cloud_url:
            raise ValueError("both middleware_url and cloud_url must be set")
        self.middleware_url = middleware_url.rstrip("/")
        self.cloud_url = cloud_url.rstrip("/")
        self._descriptors: dict[str, ServiceDescriptor] = {}

    def register(self, descriptor: ServiceDescriptor) -> None:
        if descriptor.name in self._descriptors:
            raise ValueError(f"service {descriptor.name!r} already registered")
        self._descriptors[descriptor.name] = descriptor

    def get(self, name: str) -> ServiceDescriptor:
        try:
            return self._descriptors[name]
        except KeyError:
            raise UnknownService(name) from None

    def cloud_base(self, descriptor: ServiceDescriptor) -> str:
        return (descriptor.base_url or self.cloud_url).rstrip("/")


@dataclass
class QueuedRequest:
    id: ClientRequestId
    method: str
    target_path: str
    body: bytes
    enqueued_at: int
    last_error: str = ""


@dataclass
class Queued:
    """Marker result: nothing was delivered; the request is stored locally."""

    request: QueuedRequest
    reason: str


_CLIENT_SCHEMA = """
CREATE TABLE IF NOT EXISTS queue (
    seq         INTEGER PRIMARY KEY AUTOINCREMENT,
    wire_id     TEXT NOT NULL,
    base_key    TEXT NOT NULL,
    method      TEXT NOT NULL,
    target_path TEXT NOT NULL,
    body        BLOB NOT NULL,
    enqueued_at INTEGER NOT NULL,
    last_error  TEXT NOT NULL DEFAULT ''
);
CREATE TABLE IF NOT EXISTS journal (
    base_key    TEXT PRIMARY KEY,
    wire_id     TEXT NOT NULL,
    method      TEXT NOT NULL,
    target_path TEXT NOT NULL,
    body        BLOB NOT NULL,
    direct      INTEGER NOT NULL,
    state       TEXT NOT NULL,
    message     TEXT NOT NULL DEFAULT '',
    status_code INTEGER,
    recorded_at INTEGER NOT NULL
);
"""


class LocalStore:
    """Per-device durable queue + outcome journal (FIFO-capped)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(str(self.path), check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=NORMAL")
        with self._lock, self._conn:
            self._conn.executescript(_CLIENT_SCHEMA)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # queue ---------------------------------------------------------------

    def enqueue(self, qr: QueuedRequest) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO queue (wire_id, base_key, method, target_path, body,"
                " enqueued_at, last_error) VALUES (?,?,?,?,?,?,?)",
                (
                    encode_id(qr.id),
                    qr.id.base_key,
                    qr.method,
                    qr.target_path,
                    qr.body,
                    qr.enqueued_at,
                    qr.last_error,
                ),
            )

    def queue_head(self) -> tuple[int, QueuedRequest] | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT seq, wire_id, method, target_path, body, enqueued_at, last_error"
                " FROM queue ORDER BY enqueued_at ASC, seq ASC LIMIT 1"
            ).fetchone()
        if row is None:
            return None
        return row[0], self._queued_from_row(row)

    def queue_find(self, base_key: str) -> tuple[int, QueuedRequest] | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT seq, wire_id, method, target_path, body, enqueued_at, last_error"
                " FROM queue WHERE base_key = ? ORDER BY seq ASC LIMIT 1",
                (base_key,),
            ).fetchone()
        if row is None:
            return None
        return row[0], self._queued_from_row(row)

    def queue_update(self, seq: int, wire_id: str, last_error: str) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE queue SET wire_id = ?, last_error = ? WHERE seq = ?",
                (wire_id, last_error, seq),
            )

    def queue_pop(self, seq: int) -> None:
        with self._lock, self._conn:
            self._conn.execute("DELETE FROM queue WHERE seq = ?", (seq,))

    def queue_list(self) -> list[QueuedRequest]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT seq, wire_id, method, target_path, body, enqueued_at, last_error"
                " FROM queue ORDER BY enqueued_at ASC, seq ASC"
            ).fetchall()
        return [self._queued_from_row(r) for r in rows]

    @staticmethod
    def _queued_from_row(row) -> QueuedRequest:
        return QueuedRequest(
            id=parse_id(row[1]),
            method=row[2],
            target_path=row[3],
            body=row[4],
            enqueued_at=row[5],
            last_error=row[6],
        )

    # journal ---------------------------------------------------------------

    def journal_put(
        self,
        cid: ClientRequestId,
        method: str,
        target_path: str,
        body: bytes,
        direct: bool,
        state: str,
        message: str = "",
        status_code: int | None = None,
    ) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR REPLACE INTO journal VALUES (?,?,?,?,?,?,?,?,?,?)",
                (
                    cid.base_key,
                    encode_id(cid),
                    method,
                    target_path,
                    body,
                    int(direct),
                    state,
                    message,
                    status_code,
                    now_ms(),
                ),
            )
            self._conn.execute(
                "DELETE FROM journal WHERE base_key NOT IN"
                " (SELECT base_key FROM journal ORDER BY recorded_at DESC, rowid DESC LIMIT ?)",
                (JOURNAL_CAP,),
            )

    def journal_get(self, base_key: str) -> dict | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT base_key, wire_id, method, target_path, body, direct, state,"
                " message, status_code, recorded_at FROM journal WHERE base_key = ?",
                (base_key,),
            ).fetchone()
        if row is None:
            return None
        return {
            "base_key": row[0],
            "wire_id": row[1],
            "method": row[2],
            "target_path": row[3],
            "body": row[4],
            "direct": bool(row[5]),
            "state": row[6],
            "message": row[7],
            "status_code": row[8],
            "recorded_at": row[9],
        }

    def journal_recent(self, limit: int = 20) -> list[dict]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT base_key, state, method, target_path, recorded_at FROM journal"
                " ORDER BY recorded_at DESC, rowid DESC LIMIT ?",
                (limit,),
            ).fetchall()
        return [
            {
                "base_key": r[0],
                "state": r[1],
                "method": r[2],
                "target_path": r[3],
                "recorded_at": r[4],
            }
            for r in rows
        ]


def adapt_response(resp: requests.Response, *, middleware_routed: bool, base_key: str = "") -> RsamOutcome:
    """Map a raw HTTP response onto an outcome without touching its bytes."""
    if middleware_routed:
        state_header = resp.headers.get("X-RSAM-State")
        if state_header is None:
            raise MissingStateHeader(f"middleware response {resp.status_code} lacks X-RSAM-State")
        try:
            state = OutcomeState(state_header)
        except ValueError:
            raise MissingStateHeader(f"unknown X-RSAM-State value {state_header!r}") from None
        message = resp.headers.get("X-RSAM-Message", "")
        if state is OutcomeState.DOUBT and not message:
            message = "outcome unknown"
        return RsamOutcome(
            state=state,
            payload=resp.content if state is not OutcomeState.DOUBT else b"",
            message=message,
            base_key=resp.headers.get("X-RSAM-Base-Key", base_key),
        )
    state = OutcomeState.SUCCEEDED if 200 <= resp.status_code < 300 else OutcomeState.FAILED
    return RsamOutcome(state=state, payload=resp.content, message="", base_key=base_key)


class ReliableConsumer:
    """One consumer instance per device identity.

    consume/retry are safe from multiple threads; queue draining is
    serialized internally so at most one flush runs at a time.
    """

    def __init__(
        self,
        registry: ServiceRegistry,
        device_id: str,
        store_path: str | Path,
        *,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        max_body_bytes: int = DEFAULT_MAX_BODY_BYTES,
        probe: Probe | None = None,
        session: requests.Session | None = None,
    ):
        if not device_id:
            raise ValueError("device_id must be non-empty")
        self.registry = registry
        self.device_id = device_id
        store_path = Path(store_path)
        if store_path.suffix != ".db":
            store_path = store_path / f"client-{device_id}.db"
        self.store = LocalStore(store_path)
        self.timeout_s = timeout_s
        self.max_body_bytes = max_body_bytes
        self.probe: Probe = probe or (lambda: True)
        self.session = session or requests.Session()
        self._flush_lock = threading.Lock()
        self._id_lock = threading.Lock()
        self._last_sent_at = 0

    def close(self) -> None:
        self.store.close()

    # -- identity ------------------------------------------------------------

    def _fresh_id(self, service_path: str, forced: bool) -> ClientRequestId:
        # Strictly increasing sent_at per device keeps base keys collision-free
        # even when two actions land in the same millisecond.
        with self._id_lock:
            stamp = max(now_ms(), self._last_sent_at + 1)
            self._last_sent_at = stamp
        return generate_client_id(self.device_id, stamp, service_path, trial=1, forced=forced)

    @staticmethod
    def resolve_path(descriptor: ServiceDescriptor, params: dict | None) -> str:
        params = dict(params or {})
        try:
            path = descriptor.path_template.format(**params)
        except KeyError as exc:
            raise ClientError(f"missing path parameter {exc}") from None
        # Anything not consumed by the template becomes a query string.
        leftovers = {
            k: v for k, v in params.items() if "{" + k + "}" not in descriptor.path_template
        }
        if leftovers:
            from urllib.parse import urlencode

            path += "?" + urlencode(sorted(leftovers.items()))
        return path

    # -- main entry points -----------------------------------------------------

    def consume(
        self,
        service_name: str,
        params: dict | None = None,
        body: bytes = b"",
        *,
        content_type: str | None = None,
        probe: Probe | None = None,
    ) -> RsamOutcome | Queued:
        descriptor = self.registry.get(service_name)
        if len(body) > self.max_body_bytes:
            raise PayloadTooLarge(f"{len(body)} bytes exceeds cap {self.max_body_bytes}")
        probe = probe or self.probe
        path = self.resolve_path(descriptor, params)
        cid = self._fresh_id(path, descriptor.forced)

        if descriptor.direct:
            return self._consume_direct(descriptor, cid, path, body, content_type, probe)
        return self._consume_middleware(descriptor, cid, path, body, content_type, probe)

    def retry(self, prior: RsamOutcome | Queued | QueuedRequest) -> RsamOutcome | Queued:
        """Re-send a prior attempt: same base_key, trial incremented."""
        if isinstance(prior, Queued):
            prior = prior.request
        key = prior.id.base_key if isinstance(prior, QueuedRequest) else prior.base_key
        return self.retry_by_key(key)

    def retry_by_key(self, base_key: str) -> RsamOutcome | Queued:
        """Re-send whatever is stored for a base_key, queued or journaled."""
        found = self.store.queue_find(base_key)
        if found is not None:
            seq, queued = found
            return self._send_queued(seq, queued)
        return self._retry_from_journal(base_key)

    def _retry_from_journal(self, base_key: str) -> RsamOutcome | Queued:
        entry = self.store.journal_get(base_key)
        if entry is None:
            raise ClientError(f"no stored request for base_key {base_key!r}")
        cid = parse_id(entry["wire_id"]).next_trial()
        if entry["direct"]:
            outcome = self._direct_request(cid, entry["method"], entry["target_path"], entry["body"], None)
            self._journal_outcome(cid, entry["method"], entry["target_path"], entry["body"], True, outcome)
            return outcome
        return self._middleware_attempt(
            cid, entry["method"], entry["target_path"], entry["body"], None, from_queue_seq=None
        )

    def flush_queue(self, probe: Probe | None = None) -> list[tuple[QueuedRequest, RsamOutcome]]:
        """Drain the offline queue in order while the network looks up.

        Stops at the first transport failure; the failing element stays at
        the head of the queue with its trial already advanced.
        """
        probe = probe or self.probe
        results: list[tuple[QueuedRequest, RsamOutcome]] = []
        with self._flush_lock:
            while probe():
                head = self.store.queue_head()
                if head is None:
                    break
                seq, queued = head
                sent = self._send_queued(seq, queued)
                if isinstance(sent, Queued):
                    break
                results.append((queued, sent))
        return results

    def queue_depth(self) -> int:
        return len(self.store.queue_list())

    def status(self) -> dict:
        return {
            "device_id": self.device_id,
            "queued": [
                {
                    "base_key": q.id.base_key,
                    "method": q.method,
                    "target_path": q.target_path,
                    "enqueued_at": q.enqueued_at,
                    "last_error": q.last_error,
                    "trial": q.id.trial,
                }
                for q in self.store.queue_list()
            ],
            "recent": self.store.journal_recent(),
        }

    # -- direct path -------------------------------------------------------

    def _consume_direct(
        self,
        descriptor: ServiceDescriptor,
        cid: ClientRequestId,
        path: str,
        body: bytes,
        content_type: str | None,
        probe: Probe,
    ) -> RsamOutcome:
        # Direct requests bypass the middleware and the offline queue: with
        # no dedup ledger behind them, silently replaying would be unsafe.
        if not probe():
            outcome = RsamOutcome(
                state=OutcomeState.FAILED,
                message="network unreachable",
                base_key=cid.base_key,
            )
            self._journal_outcome(cid, descriptor.method, path, body, True, outcome)
            return outcome
        outcome = self._direct_request(
            cid, descriptor.method, path, body, content_type,
            base=self.registry.cloud_base(descriptor),
        )
        self._journal_outcome(cid, descriptor.method, path, body, True, outcome)
        return outcome

    def _direct_request(
        self,
        cid: ClientRequestId,
        method: str,
        path: str,
        body: bytes,
        content_type: str | None,
        base: str | None = None,
    ) -> RsamOutcome:
        base = base or self.registry.cloud_url
        headers = {}
        if content_type:
            headers["Content-Type"] = content_type
        try:
            resp = self.session.request(
                method,
                base + path,
                headers=headers,
                data=body or None,
                timeout=self.timeout_s,
            )
        except (requests.exceptions.ConnectionError, requests.exceptions.Timeout) as exc:
            return RsamOutcome(
                state=OutcomeState.FAILED,
                message=f"direct request failed: {exc.__class__.__name__}",
                base_key=cid.base_key,
            )
        return adapt_response(resp, middleware_routed=False, base_key=cid.base_key)

    # -- middleware path ------------------------------------------------------

    def _consume_middleware(
        self,
        descriptor: ServiceDescriptor,
        cid: ClientRequestId,
        path: str,
        body: bytes,
        content_type: str | None,
        probe: Probe,
    ) -> RsamOutcome | Queued:
        if not probe():
            return self._enqueue(cid, descriptor.method, path, body, "network unreachable")
        return self._middleware_attempt(
            cid, descriptor.method, path, body, content_type, from_queue_seq=None
        )

    def _middleware_attempt(
        self,
        cid: ClientRequestId,
        method: str,
        path: str,
        body: bytes,
        content_type: str | None,
        *,
        from_queue_seq: int | None,
    ) -> RsamOutcome | Queued:
        headers = {
            "X-RSAM-Client-Id": encode_id(cid),
            "X-RSAM-Forced": "1" if cid.forced else "0",
        }
        if content_type:
            headers["Content-Type"] = content_type
        url = self.registry.middleware_url + "/proxy" + path
        try:
            resp = self.session.request(
                method, url, headers=headers, data=body or None, timeout=self.timeout_s
            )
        except (requests.exceptions.ConnectionError, requests.exceptions.Timeout) as exc:
            reason = (
                "client timeout"
                if isinstance(exc, requests.exceptions.Timeout)
                else "middleware unreachable"
            )
            return self._queue_or_requeue(cid, method, path, body, reason, from_queue_seq)
        if "X-RSAM-State" not in resp.headers:
            if resp.status_code >= 500:
                # The middleware itself malfunctioned before proxying.
                return self._queue_or_requeue(
                    cid, method, path, body, f"middleware error {resp.status_code}", from_queue_seq
                )
            raise MissingStateHeader(
                f"middleware response {resp.status_code} lacks X-RSAM-State"
            )
        outcome = adapt_response(resp, middleware_routed=True, base_key=cid.base_key)
        if from_queue_seq is not None:
            self.store.queue_pop(from_queue_seq)
        self._journal_outcome(cid, method, path, body, False, outcome, resp.status_code)
        return outcome

    def _send_queued(self, seq: int, queued: QueuedRequest) -> RsamOutcome | Queued:
        cid = queued.id.next_trial()
        # Persist the new trial before sending so a crash cannot reuse it.
        self.store.queue_update(seq, encode_id(cid), queued.last_error)
        return self._middleware_attempt(
            cid, queued.method, queued.target_path, queued.body, None, from_queue_seq=seq
        )

    def _enqueue(
        self, cid: ClientRequestId, method: str, path: str, body: bytes, reason: str
    ) -> Queued:
        qr = QueuedRequest(
            id=cid,
            method=method,
            target_path=path,
            body=body,
            enqueued_at=now_ms(),
            last_error=reason,
        )
        self.store.enqueue(qr)
        self.store.journal_put(cid, method, path, body, False, "QUEUED", reason)
        logger.info("queued %s %s key=%s (%s)", method, path, cid.base_key, reason)
        return Queued(request=qr, reason=reason)

    def _queue_or_requeue(
        self,
        cid: ClientRequestId,
        method: str,
        path: str,
        body: bytes,
        reason: str,
        from_queue_seq: int | None,
    ) -> Queued:
        if from_queue_seq is not None:
            self.store.queue_update(from_queue_seq, encode_id(cid), reason)
            qr = QueuedRequest(
                id=cid,
                method=method,
                target_path=path,
                body=body,
                enqueued_at=now_ms(),
                last_error=reason,
            )
            return Queued(request=qr, reason=reason)
        return self._enqueue(cid, method, path, body, reason)

    def _journal_outcome(
        self,
        cid: ClientRequestId,
        method: str,
        path: str,
        body: bytes,
        direct: bool,
        outcome: RsamOutcome,
        status_code: int | None = None,
    ) -> None:
        self.store.journal_put(
            cid, method, path, body, direct, outcome.state.value, outcome.message, status_code
        )


def parse_payload(descriptor: ServiceDescriptor, outcome: RsamOutcome):
    """Decode an outcome payload according to the descriptor's response kind."""
    if descriptor.response_kind == "json":
        return json.loads(outcome.payload.decode() or "null")
    if descriptor.response_kind == "text":
        return outcome.payload.decode()
    return outcome.payload
