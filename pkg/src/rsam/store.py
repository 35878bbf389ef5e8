"""Durable request/response ledger backing the middleware gateway.

Backed by sqlite in WAL mode: committed writes survive an abrupt process
kill, which is exactly the property the doubt-window detection relies on.
One row per base_key in ``requests``; any number of linked rows in
``responses`` (one per forwarded trial that produced an HTTP response).
"""

from __future__ import annotations

import logging
import sqlite3
import threading
import uuid
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .protocol import Lifecycle

logger = logging.getLogger(__name__)

DB_FILENAME = "rsam-gateway.db"
BLOB_DIR = "blobs"
# Bodies above this size live in sidecar files: large blobs through the WAL
# are measurably slower and noisier than plain file writes.
BLOB_INLINE_MAX = 256 * 1024


class StoreCorrupt(Exception):
    """The on-disk store failed its integrity check."""


class ResponseOutcome(str, Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"


def outcome_for_status(status_code: int) -> ResponseOutcome:
    return ResponseOutcome.SUCCESS if 200 <= status_code < 300 else ResponseOutcome.FAILURE


@dataclass
class RequestRecord:
    base_key: str
    device_id: str
    method: str
    target_path: str
    body_digest: str
    body: bytes
    lifecycle: Lifecycle
    trial_count: int
    forced: bool
    created_at: int
    forwarded_at: int | None = None
    completed_at: int | None = None


@dataclass
class ResponseRecord:
    base_key: str
    status_code: int
    body: bytes
    content_type: str
    outcome: ResponseOutcome
    received_at: int
    trial: int


_SCHEMA = """
CREATE TABLE IF NOT EXISTS requests (
    base_key     TEXT PRIMARY KEY,
    device_id    TEXT NOT NULL,
    method       TEXT NOT NULL,
    target_path  TEXT NOT NULL,
    body_digest  TEXT NOT NULL,
    body         BLOB NOT NULL,
    lifecycle    TEXT NOT NULL,
    trial_count  INTEGER NOT NULL,
    forced       INTEGER NOT NULL,
    created_at   INTEGER NOT NULL,
    forwarded_at INTEGER,
    completed_at INTEGER
);
CREATE TABLE IF NOT EXISTS responses (
    id           INTEGER PRIMARY KEY AUTOINCREMENT,
    base_key     TEXT NOT NULL,
    status_code  INTEGER NOT NULL,
    body         BLOB NOT NULL,
    body_file    TEXT,
    content_type TEXT NOT NULL,
    outcome      TEXT NOT NULL,
    received_at  INTEGER NOT NULL,
    trial        INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_responses_key ON responses(base_key, received_at);
CREATE INDEX IF NOT EXISTS idx_requests_device ON requests(device_id);
"""


class RequestStore:
    """Thread-safe ledger; every public method is one atomic transaction."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / DB_FILENAME
        self.blob_dir = self.directory / BLOB_DIR
        self.blob_dir.mkdir(exist_ok=True)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(str(self.path), check_same_thread=False)
        try:
            # Large pages + deferred checkpoints keep multi-MiB body writes on
            # the fast path; committed WAL data still survives a process kill.
            self._conn.execute("PRAGMA page_size=65536")
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA synchronous=NORMAL")
            self._conn.execute("PRAGMA wal_autocheckpoint=8192")
            self._conn.execute("PRAGMA busy_timeout=10000")
            with self._lock, self._conn:
                self._conn.executescript(_SCHEMA)
        except sqlite3.DatabaseError as exc:
            raise StoreCorrupt(f"{self.path}: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            try:
                self._conn.execute("PRAGMA wal_checkpoint(TRUNCATE)")
            except sqlite3.DatabaseError:
                pass
            self._conn.close()

    # -- requests ---------------------------------------------------------

    def put_request(self, rec: RequestRecord) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR REPLACE INTO requests VALUES (?,?,?,?,?,?,?,?,?,?,?,?)",
                (
                    rec.base_key,
                    rec.device_id,
                    rec.method,
                    rec.target_path,
                    rec.body_digest,
                    rec.body,
                    rec.lifecycle.value,
                    rec.trial_count,
                    int(rec.forced),
                    rec.created_at,
                    rec.forwarded_at,
                    rec.completed_at,
                ),
            )

    def get_request(self, base_key: str, include_deleted: bool = False) -> RequestRecord | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM requests WHERE base_key = ?", (base_key,)
            ).fetchone()
        if row is None:
            return None
        rec = self._record_from_row(row)
        if rec.lifecycle is Lifecycle.DELETED and not include_deleted:
            return None
        return rec

    def set_lifecycle(
        self,
        base_key: str,
        lifecycle: Lifecycle,
        *,
        forwarded_at: int | None = None,
        completed_at: int | None = None,
        trial_count: int | None = None,
    ) -> None:
        sets = ["lifecycle = ?"]
        args: list[object] = [lifecycle.value]
        if forwarded_at is not None:
            sets.append("forwarded_at = ?")
            args.append(forwarded_at)
        if completed_at is not None:
            sets.append("completed_at = ?")
            args.append(completed_at)
        if trial_count is not None:
            sets.append("trial_count = ?")
            args.append(trial_count)
        args.append(base_key)
        with self._lock, self._conn:
            self._conn.execute(
                f"UPDATE requests SET {', '.join(sets)} WHERE base_key = ?", args
            )

    def bump_trial(self, base_key: str, trial: int) -> None:
        """trial_count tracks the highest trial ever seen for the key."""
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE requests SET trial_count = MAX(trial_count, ?) WHERE base_key = ?",
                (trial, base_key),
            )

    def mark_deleted(self, base_key: str) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE requests SET lifecycle = ? WHERE base_key = ?",
                (Lifecycle.DELETED.value, base_key),
            )

    # -- responses --------------------------------------------------------

    def add_response(
        self,
        resp: ResponseRecord,
        new_lifecycle: Lifecycle,
        completed_at: int,
    ) -> None:
        """Persist an upstream outcome and advance the request in one txn.

        Large bodies are written as sidecar files before the row commits, so
        a committed row always has its bytes; a crash in between leaves only
        a harmless orphan file.
        """
        inline, body_file = resp.body, None
        if len(resp.body) > BLOB_INLINE_MAX:
            body_file = f"{uuid.uuid4().hex}.bin"
            (self.blob_dir / body_file).write_bytes(resp.body)
            inline = b""
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO responses (base_key, status_code, body, body_file,"
                " content_type, outcome, received_at, trial) VALUES (?,?,?,?,?,?,?,?)",
                (
                    resp.base_key,
                    resp.status_code,
                    inline,
                    body_file,
                    resp.content_type,
                    resp.outcome.value,
                    resp.received_at,
                    resp.trial,
                ),
            )
            self._conn.execute(
                "UPDATE requests SET lifecycle = ?, completed_at = ? WHERE base_key = ?",
                (new_lifecycle.value, completed_at, resp.base_key),
            )

    _RESPONSE_COLUMNS = (
        "base_key, status_code, body, body_file, content_type, outcome, received_at, trial"
    )

    def latest_succeeded_response(
        self, base_key: str, *, not_before: int | None = None
    ) -> ResponseRecord | None:
        query = (
            f"SELECT {self._RESPONSE_COLUMNS} FROM responses"
            " WHERE base_key = ? AND outcome = ?"
        )
        args: list[object] = [base_key, ResponseOutcome.SUCCESS.value]
        if not_before is not None:
            query += " AND received_at >= ?"
            args.append(not_before)
        query += " ORDER BY received_at DESC, id DESC LIMIT 1"
        with self._lock:
            row = self._conn.execute(query, args).fetchone()
        return self._response_from_row(row) if row else None

    def latest_response(self, base_key: str) -> ResponseRecord | None:
        with self._lock:
            row = self._conn.execute(
                f"SELECT {self._RESPONSE_COLUMNS} FROM responses"
                " WHERE base_key = ? ORDER BY received_at DESC, id DESC LIMIT 1",
                (base_key,),
            ).fetchone()
        return self._response_from_row(row) if row else None

    # -- management views -------------------------------------------------

    def list_requests(
        self, device_id: str | None = None, state: str | None = None
    ) -> list[dict]:
        """Summaries for the management API, newest first.

        A FORWARDED record with no successful response is surfaced as
        IN_DOUBT_WINDOW so an operator can see requests whose upstream
        outcome is unknown.
        """
        query = (
            "SELECT r.*, "
            " (SELECT outcome FROM responses p WHERE p.base_key = r.base_key"
            "   ORDER BY p.received_at DESC, p.id DESC LIMIT 1) AS latest_outcome,"
            " EXISTS(SELECT 1 FROM responses s WHERE s.base_key = r.base_key"
            "   AND s.outcome = 'SUCCESS') AS has_success"
            " FROM requests r WHERE r.lifecycle != 'DELETED'"
        )
        args: list[object] = []
        if device_id:
            query += " AND r.device_id = ?"
            args.append(device_id)
        query += " ORDER BY r.created_at DESC, r.rowid DESC"
        with self._lock:
            rows = self._conn.execute(query, args).fetchall()
        summaries = []
        for row in rows:
            lifecycle = Lifecycle(row[6])
            display = lifecycle.value
            if lifecycle is Lifecycle.FORWARDED and not row[13]:
                display = "IN_DOUBT_WINDOW"
            if state and state not in (display, lifecycle.value):
                continue
            summaries.append(
                {
                    "base_key": row[0],
                    "device_id": row[1],
                    "method": row[2],
                    "target_path": row[3],
                    "state": display,
                    "trial_count": row[7],
                    "created_at": row[9],
                    "forwarded_at": row[10],
                    "completed_at": row[11],
                    "latest_outcome": row[12],
                }
            )
        return summaries

    def summary(self, base_key: str) -> dict | None:
        for item in self.list_requests():
            if item["base_key"] == base_key:
                return item
        return None

    # -- startup ----------------------------------------------------------

    def recover_on_startup(self) -> dict:
        """Verify integrity and report what survived.

        Records sitting in FORWARDED with no response are deliberately kept
        as-is: their upstream outcome is unknowable, and flattening them to
        FAILED would invite duplicate execution. They surface as doubt on
        the next submission instead.
        """
        try:
            with self._lock:
                result = self._conn.execute("PRAGMA quick_check").fetchone()
        except sqlite3.DatabaseError as exc:
            raise StoreCorrupt(str(exc)) from exc
        if result is None or result[0] != "ok":
            raise StoreCorrupt(f"integrity check failed: {result}")
        with self._lock:
            sidecars = self._conn.execute(
                "SELECT body_file FROM responses WHERE body_file IS NOT NULL"
            ).fetchall()
        for (name,) in sidecars:
            if not (self.blob_dir / name).is_file():
                raise StoreCorrupt(f"missing response body file {name}")
        with self._lock:
            total = self._conn.execute("SELECT COUNT(*) FROM requests").fetchone()[0]
            in_window = self._conn.execute(
                "SELECT COUNT(*) FROM requests r WHERE r.lifecycle = 'FORWARDED'"
                " AND NOT EXISTS(SELECT 1 FROM responses s WHERE s.base_key = r.base_key"
                "   AND s.outcome = 'SUCCESS')"
            ).fetchone()[0]
        report = {"requests": total, "in_doubt_window": in_window}
        logger.info("store recovered: %s", report)
        return report

    # -- row mapping -------------------------------------------------------

    @staticmethod
    def _record_from_row(row) -> RequestRecord:
        return RequestRecord(
            base_key=row[0],
            device_id=row[1],
            method=row[2],
            target_path=row[3],
            body_digest=row[4],
            body=row[5],
            lifecycle=Lifecycle(row[6]),
            trial_count=row[7],
            forced=bool(row[8]),
            created_at=row[9],
            forwarded_at=row[10],
            completed_at=row[11],
        )

    def _response_from_row(self, row) -> ResponseRecord:
        body = row[2] if row[3] is None else (self.blob_dir / row[3]).read_bytes()
        return ResponseRecord(
            base_key=row[0],
            status_code=row[1],
            body=body,
            content_type=row[4],
            outcome=ResponseOutcome(row[5]),
            received_at=row[6],
            trial=row[7],
        )
