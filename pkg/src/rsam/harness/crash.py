"""Gateway crash injection around the doubt window.

Kills the gateway process after it has forwarded a request upstream but
before it persists the response, restarts it on the same store, and
replays the same identity. A non-idempotent request must come back as
DOUBT; an idempotent one is safely re-forwarded to success.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..client import Queued
from ..protocol import ServiceDescriptor
from .control import HarnessStack

AFTER_FORWARD_BEFORE_RESPONSE = "after-forward-before-response"
SUPPORTED_POINTS = {AFTER_FORWARD_BEFORE_RESPONSE}


class InjectionUnsupportedPoint(Exception):
    pass


@dataclass
class CrashReport:
    point: str
    control_outcome: str
    post_replay_outcome: str
    post_invocations: int
    get_replay_outcome: str
    get_invocations: int

    @property
    def ok(self) -> bool:
        return (
            self.control_outcome == "SUCCEEDED"
            and self.post_replay_outcome == "DOUBT"
            and self.post_invocations == 1
            and self.get_replay_outcome == "SUCCEEDED"
            and self.get_invocations == 2
        )


def _crash_and_replay(stack: HarnessStack, consumer, service: str, body: bytes):
    stack.apply_script(
        {"routes": {"/svc/": {"body_bytes": 96, "crash_gateway_after_forward": True}}}
    )
    result = consumer.consume(service, body=body)
    # The gateway died mid-request, so the attempt lands in the local queue.
    assert isinstance(result, Queued), f"expected a queued result, got {result!r}"
    base_key = result.request.id.base_key
    stack.gateway.wait_exit(timeout_s=10)
    stack.gateway.start()
    drained = consumer.flush_queue()
    assert len(drained) == 1, f"queue should drain one entry, got {drained!r}"
    outcome = drained[0][1]
    return outcome.state.value, stack.upstream.invocations(base_key), outcome


def crash_injection(point: str, stack: HarnessStack | None = None) -> CrashReport:
    if point not in SUPPORTED_POINTS:
        raise InjectionUnsupportedPoint(
            f"{point!r}; supported: {', '.join(sorted(SUPPORTED_POINTS))}"
        )
    own_stack = stack is None
    if own_stack:
        stack = HarnessStack(test_hooks=True)
    try:
        stack.apply_script({"routes": {"/svc/": {"body_bytes": 96}}})

        control = stack.consumer("crash-control")
        control.registry.register(
            ServiceDescriptor(name="orders", method="POST", path_template="/svc/orders")
        )
        control_outcome = control.consume("orders", body=b'{"n": 0}')
        control_state = getattr(control_outcome, "state", None)
        control_value = control_state.value if control_state else "QUEUED"

        post_consumer = stack.consumer("crash-post")
        post_consumer.registry.register(
            ServiceDescriptor(name="orders", method="POST", path_template="/svc/orders")
        )
        post_state, post_count, _ = _crash_and_replay(
            stack, post_consumer, "orders", b'{"n": 1}'
        )

        get_consumer = stack.consumer("crash-get")
        get_consumer.registry.register(
            ServiceDescriptor(name="feed", method="GET", path_template="/svc/feed")
        )
        get_state, get_count, _ = _crash_and_replay(stack, get_consumer, "feed", b"")

        stack.upstream.set_faults({})
        return CrashReport(
            point=point,
            control_outcome=control_value,
            post_replay_outcome=post_state,
            post_invocations=post_count,
            get_replay_outcome=get_state,
            get_invocations=get_count,
        )
    finally:
        if own_stack:
            stack.close()
