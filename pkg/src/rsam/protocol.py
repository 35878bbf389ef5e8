"""Pure core of the RSAM reliable-consumption protocol.

Request identity, wire codec, lifecycle state machine and the middleware
decision function. Everything in this module is a deterministic function
over value types: no I/O, no clocks, no shared mutable state, so every
branch is unit-testable and safe to call from any thread.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace
from enum import Enum
from urllib.parse import quote, unquote

DEFAULT_MAX_SKEW_MS = 5 * 60 * 1000  # tolerated client clock drift into the future

_WIRE_FIELD_COUNT = 5
# Tokens produced by quote(..., safe=""): unreserved characters plus %XX escapes.
_ENCODED_TOKEN = re.compile(r"^(?:[A-Za-z0-9_.~-]|%[0-9A-Fa-f]{2})*$")
_DIGITS = re.compile(r"^[0-9]+$")

SAFE_METHODS = frozenset({"GET", "HEAD", "OPTIONS"})
IDEMPOTENT_METHODS = SAFE_METHODS | {"PUT", "DELETE"}
KNOWN_METHODS = IDEMPOTENT_METHODS | {"POST", "PATCH"}


class RsamError(Exception):
    """Base class for protocol-level errors."""


class EmptyDeviceId(RsamError):
    pass


class InvalidTrial(RsamError):
    pass


class MalformedId(RsamError):
    """The wire string is not a well-formed client request id."""


class ClockSkew(RsamError):
    """The id claims to have been sent too far in the future."""


class IllegalTransition(RsamError):
    pass


@dataclass(frozen=True)
class ClientRequestId:
    """Globally unique identity of one logical client request.

    The structural part (device_id, sent_at, service_path) pins the request's
    identity and never changes across retries; the behavioral part (trial,
    forced) describes the attempt. ``base_key`` is the deduplication key.
    """

    device_id: str
    sent_at: int  # epoch milliseconds on the sending device
    service_path: str  # raw target path; percent-encoded only on the wire
    trial: int = 1
    forced: bool = False

    @property
    def base_key(self) -> str:
        return ":".join(
            (
                quote(self.device_id, safe=""),
                str(self.sent_at),
                quote(self.service_path, safe=""),
            )
        )

    def next_trial(self) -> "ClientRequestId":
        """Same logical request, one more attempt."""
        return replace(self, trial=self.trial + 1)


def generate_client_id(
    device_id: str,
    now_ms: int,
    service_path: str,
    trial: int = 1,
    forced: bool = False,
) -> ClientRequestId:
    """Build a request id; deterministic for identical inputs."""
    if not device_id:
        raise EmptyDeviceId("device_id must be non-empty")
    if trial < 1:
        raise InvalidTrial(f"trial must be >= 1, got {trial}")
    return ClientRequestId(
        device_id=device_id,
        sent_at=int(now_ms),
        service_path=service_path,
        trial=trial,
        forced=forced,
    )


def encode_id(cid: ClientRequestId) -> str:
    """Wire form: ``device:sent_at:path:trial:forced`` with encoded tokens."""
    if not cid.device_id:
        raise EmptyDeviceId("refusing to encode an id without a device_id")
    if cid.trial < 1:
        raise InvalidTrial(f"trial must be >= 1, got {cid.trial}")
    return f"{cid.base_key}:{cid.trial}:{1 if cid.forced else 0}"


def parse_id(raw: str) -> ClientRequestId:
    """Inverse of :func:`encode_id`; raises MalformedId on anything else."""
    if not isinstance(raw, str):
        raise MalformedId("id must be a string")
    parts = raw.split(":")
    if len(parts) != _WIRE_FIELD_COUNT:
        raise MalformedId(f"expected {_WIRE_FIELD_COUNT} fields, got {len(parts)}")
    enc_device, sent_at_s, enc_path, trial_s, forced_s = parts
    if not enc_device or not _ENCODED_TOKEN.match(enc_device):
        raise MalformedId("bad device token")
    if not _ENCODED_TOKEN.match(enc_path):
        raise MalformedId("bad path token")
    if not _DIGITS.match(sent_at_s):
        raise MalformedId("sent_at must be a non-negative integer")
    if not _DIGITS.match(trial_s):
        raise MalformedId("trial must be a positive integer")
    trial = int(trial_s)
    if trial < 1:
        raise MalformedId("trial must be >= 1")
    if forced_s not in ("0", "1"):
        raise MalformedId("forced flag must be 0 or 1")
    device_id = unquote(enc_device)
    if not device_id:
        raise MalformedId("device_id decodes to empty")
    return ClientRequestId(
        device_id=device_id,
        sent_at=int(sent_at_s),
        service_path=unquote(enc_path),
        trial=trial,
        forced=forced_s == "1",
    )


def validate_id(raw: str, now_ms: int, max_skew_ms: int = DEFAULT_MAX_SKEW_MS) -> ClientRequestId:
    """Parse and sanity-check an incoming wire id.

    Accepts arbitrarily old timestamps (they are identities, not leases) but
    rejects ids claiming to come from the future beyond ``max_skew_ms``.
    """
    cid = parse_id(raw)
    if cid.sent_at > now_ms + max_skew_ms:
        raise ClockSkew(
            f"sent_at {cid.sent_at} is more than {max_skew_ms}ms ahead of {now_ms}"
        )
    return cid


def body_digest(body: bytes) -> str:
    """Digest used to detect base_key collisions and tampering."""
    return hashlib.sha256(body).hexdigest()


class Lifecycle(str, Enum):
    RECEIVED = "RECEIVED"
    FORWARDED = "FORWARDED"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"
    DELETED = "DELETED"


class LifecycleEvent(str, Enum):
    FORWARD = "FORWARD"
    UPSTREAM_OK = "UPSTREAM_OK"
    UPSTREAM_ERR = "UPSTREAM_ERR"
    RETRY = "RETRY"
    DELETE = "DELETE"


# FORWARDED + RETRY is a legal self-loop: a record whose outcome is unknown
# may be re-forwarded (idempotent target or explicit operator retry) and is
# still in flight afterwards. SUCCEEDED is terminal except for DELETE, and
# DELETED absorbs everything it legally accepts.
_TRANSITIONS: dict[tuple[Lifecycle, LifecycleEvent], Lifecycle] = {
    (Lifecycle.RECEIVED, LifecycleEvent.FORWARD): Lifecycle.FORWARDED,
    (Lifecycle.FORWARDED, LifecycleEvent.UPSTREAM_OK): Lifecycle.SUCCEEDED,
    (Lifecycle.FORWARDED, LifecycleEvent.UPSTREAM_ERR): Lifecycle.FAILED,
    (Lifecycle.FORWARDED, LifecycleEvent.RETRY): Lifecycle.FORWARDED,
    (Lifecycle.FAILED, LifecycleEvent.RETRY): Lifecycle.FORWARDED,
}
for _state in Lifecycle:
    _TRANSITIONS[(_state, LifecycleEvent.DELETE)] = Lifecycle.DELETED


def transition(current: Lifecycle, event: LifecycleEvent) -> Lifecycle:
    nxt = _TRANSITIONS.get((current, event))
    if nxt is None:
        raise IllegalTransition(f"{current.value} does not accept {event.value}")
    return nxt


class OutcomeState(str, Enum):
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"
    CACHED = "CACHED"
    DOUBT = "DOUBT"


@dataclass(frozen=True)
class RsamOutcome:
    """What a consumer is ultimately notified with for one attempt."""

    state: OutcomeState
    payload: bytes = b""
    message: str = ""
    base_key: str = ""

    def __post_init__(self) -> None:
        if self.state is OutcomeState.DOUBT:
            if self.payload:
                raise ValueError("DOUBT outcomes carry no payload")
            if not self.message:
                raise ValueError("DOUBT outcomes must explain themselves")


class DecisionKind(str, Enum):
    FORWARD_FIRST_TIME = "FORWARD_FIRST_TIME"
    FORWARD_RETRY = "FORWARD_RETRY"
    SERVE_CACHED = "SERVE_CACHED"
    DOUBT = "DOUBT"
    REJECT_INVALID = "REJECT_INVALID"


def decide(
    stored_state: Lifecycle | None,
    has_succeeded_response: bool,
    incoming_forced: bool,
    descriptor_forced: bool,
    idempotent: bool,
    body_digest_matches: bool,
) -> DecisionKind:
    """Total decision function for an incoming id against the stored ledger.

    Rule order matters and is part of the contract:
      1. nothing stored (or stored but deleted) -> first-time forward
      2. stored but the resubmission does not match it -> reject (collision)
      3. forced anywhere -> forward again, cache is never consulted
      4. a successful response exists -> serve it from cache
      5. still in flight with unknown outcome -> DOUBT unless the request is
         idempotent, in which case re-forwarding is safe
      6. anything else (failed, never forwarded) -> forward again
    """
    if stored_state is None or stored_state is Lifecycle.DELETED:
        return DecisionKind.FORWARD_FIRST_TIME
    if not body_digest_matches:
        return DecisionKind.REJECT_INVALID
    if incoming_forced or descriptor_forced:
        return DecisionKind.FORWARD_RETRY
    if has_succeeded_response:
        return DecisionKind.SERVE_CACHED
    if stored_state is Lifecycle.FORWARDED and not idempotent:
        return DecisionKind.DOUBT
    return DecisionKind.FORWARD_RETRY


@dataclass(frozen=True)
class ServiceDescriptor:
    """Routing and behavioral description of one consumable service."""

    name: str
    method: str
    path_template: str
    base_url: str | None = None
    param_spec: tuple[tuple[str, str], ...] = ()
    response_kind: str = "bytes"
    forced: bool = False
    direct: bool = False
    idempotent: bool | None = None  # None -> derived from the method

    def __post_init__(self) -> None:
        method = self.method.upper()
        if method not in KNOWN_METHODS:
            raise ValueError(f"unsupported HTTP method {self.method!r}")
        object.__setattr__(self, "method", method)
        if self.idempotent is False and method in SAFE_METHODS:
            # Safe methods may always be replayed; they can never produce DOUBT.
            raise ValueError(f"{method} requests are idempotent by definition")

    @property
    def effective_idempotent(self) -> bool:
        if self.idempotent is not None:
            return self.idempotent
        return self.method in IDEMPOTENT_METHODS


def method_idempotent(method: str) -> bool:
    """Default idempotency classification by HTTP method."""
    return method.upper() in IDEMPOTENT_METHODS
