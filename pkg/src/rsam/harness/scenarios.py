"""End-to-end reachability scenarios.

Each scenario drives a real consumer through one combination of
mobile / middleware / cloud-service availability and asserts the terminal
outcome plus the upstream invocation count, so the dedup, caching, queueing
and failure-surfacing behaviors are all observable in one run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..client import Queued, ReliableConsumer
from ..protocol import OutcomeState, ServiceDescriptor
from .control import HarnessStack
from .upstream import deterministic_payload


class ScenarioFailed(Exception):
    def __init__(self, report: "ScenarioReport"):
        self.report = report
        failed = next((a for a in report.assertions if not a.ok), None)
        super().__init__(f"{report.name}: {failed.desc if failed else 'unknown'} -- {failed.detail if failed else ''}")


@dataclass
class Assertion:
    desc: str
    ok: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    name: str
    states: tuple[str, str, str]  # (mobile, middleware, cloud service)
    terminal: str = ""
    assertions: list[Assertion] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def ok(self) -> bool:
        return all(a.ok for a in self.assertions)

    def check(self, desc: str, ok: bool, detail: str = "") -> None:
        self.assertions.append(Assertion(desc, bool(ok), detail))
        if not ok:
            raise ScenarioFailed(self)


ORDERS_BODY_BYTES = 64
SLOW_BODY_BYTES = 2048


def _register_orders(consumer: ReliableConsumer, name: str = "orders") -> None:
    consumer.registry.register(
        ServiceDescriptor(name=name, method="POST", path_template="/svc/orders")
    )


def _register_slow(consumer: ReliableConsumer, name: str = "slow-report") -> None:
    consumer.registry.register(
        ServiceDescriptor(name=name, method="GET", path_template="/svc/slow-report")
    )


def scenario_all_reachable(stack: HarnessStack) -> ScenarioReport:
    report = ScenarioReport("all-reachable", ("reachable", "reachable", "reachable"))
    stack.upstream.set_faults({"routes": {"/svc/orders": {"body_bytes": ORDERS_BODY_BYTES}}})
    consumer = stack.consumer("dev-r1")
    _register_orders(consumer)
    result = consumer.consume("orders", body=b'{"item": "coffee"}')
    report.check("outcome is SUCCEEDED", getattr(result, "state", None) is OutcomeState.SUCCEEDED, repr(result))
    report.check("payload is the upstream body", result.payload == deterministic_payload(ORDERS_BODY_BYTES))
    report.check("one upstream invocation", stack.upstream.invocations(result.base_key) == 1,
                 str(stack.upstream.stats()))
    record = stack.gateway.record(result.base_key)
    report.check("ledger shows SUCCEEDED", record is not None and record["state"] == "SUCCEEDED", str(record))
    report.terminal = "SUCCEEDED"
    return report


def scenario_cloud_unreachable(stack: HarnessStack) -> ScenarioReport:
    report = ScenarioReport("cloud-unreachable", ("reachable", "reachable", "non-reachable"))
    stack.upstream.set_faults({"routes": {"/svc/orders": {"reachable": False}}})
    consumer = stack.consumer("dev-r2")
    _register_orders(consumer)
    result = consumer.consume("orders", body=b'{"item": "tea"}')
    report.check("outcome is FAILED", getattr(result, "state", None) is OutcomeState.FAILED, repr(result))
    report.check("zero upstream invocations", stack.upstream.invocations(result.base_key) == 0)
    record = stack.gateway.record(result.base_key)
    report.check("ledger shows FAILED", record is not None and record["state"] == "FAILED", str(record))
    stack.upstream.set_faults({})
    report.terminal = "FAILED"
    return report


def scenario_cloud_server_error(stack: HarnessStack) -> ScenarioReport:
    report = ScenarioReport("cloud-server-error", ("reachable", "reachable", "server error"))
    stack.upstream.set_faults(
        {"routes": {"/svc/orders": {"status": 500, "body_bytes": ORDERS_BODY_BYTES}}}
    )
    consumer = stack.consumer("dev-r3")
    _register_orders(consumer)
    result = consumer.consume("orders", body=b'{"item": "juice"}')
    report.check("outcome is FAILED", getattr(result, "state", None) is OutcomeState.FAILED, repr(result))
    report.check("one upstream invocation", stack.upstream.invocations(result.base_key) == 1)
    # The error clears; an operator retries the stored request.
    stack.upstream.set_faults({"routes": {"/svc/orders": {"body_bytes": ORDERS_BODY_BYTES}}})
    retried = stack.gateway.retry(result.base_key)
    report.check("management retry accepted", retried.status_code == 200, retried.text)
    report.check("retry outcome SUCCEEDED", retried.json()["outcome"] == "SUCCEEDED", retried.text)
    report.check("two upstream invocations after retry",
                 stack.upstream.invocations(result.base_key) == 2)
    report.terminal = "FAILED"
    return report


def scenario_middleware_unreachable(stack: HarnessStack) -> ScenarioReport:
    report = ScenarioReport(
        "middleware-unreachable", ("reachable", "non-reachable / server error", "any")
    )
    before_total = stack.upstream.stats()["total"]

    # Variant A: the gateway cannot be reached at all.
    dead = stack.consumer("dev-r4a", middleware_url="http://127.0.0.1:9")
    _register_orders(dead)
    result = dead.consume("orders", body=b'{"item": "bread"}')
    report.check("unreachable middleware queues the request", isinstance(result, Queued), repr(result))
    report.check("queued request kept locally", dead.queue_depth() == 1)

    # Variant B: the gateway answers but fails internally before proxying.
    stack.gateway.inject_fail_next()
    erroring = stack.consumer("dev-r4b")
    _register_orders(erroring)
    result_b = erroring.consume("orders", body=b'{"item": "milk"}')
    report.check("middleware error queues the request", isinstance(result_b, Queued), repr(result_b))
    report.check("nothing reached the upstream", stack.upstream.stats()["total"] == before_total)
    report.check("no ledger entry was created",
                 stack.gateway.list_requests(device_id="dev-r4b") == [])
    report.terminal = "QUEUED"
    return report


def scenario_mobile_unreachable(stack: HarnessStack) -> ScenarioReport:
    report = ScenarioReport("mobile-unreachable", ("non-reachable", "any", "any"))
    before_total = stack.upstream.stats()["total"]
    consumer = stack.consumer("dev-r5", probe=lambda: False)
    _register_orders(consumer)
    result = consumer.consume("orders", body=b'{"item": "eggs"}')
    report.check("offline consume queues without sending", isinstance(result, Queued), repr(result))
    report.check("nothing reached the upstream", stack.upstream.stats()["total"] == before_total)
    report.check("no ledger entry was created",
                 stack.gateway.list_requests(device_id="dev-r5") == [])
    report.check("queued request kept locally", consumer.queue_depth() == 1)
    report.terminal = "QUEUED"
    return report


def scenario_client_timeout(stack: HarnessStack) -> ScenarioReport:
    """Client gives up, middleware finishes the work, retry serves the cache."""
    report = ScenarioReport("client-timeout", ("timed out", "reachable", "reachable"))
    stack.upstream.set_faults(
        {"routes": {"/svc/slow-report": {"latency_ms": 3000, "body_bytes": SLOW_BODY_BYTES}}}
    )
    consumer = stack.consumer("dev-r6", timeout_s=1.0)
    _register_slow(consumer)
    started = time.monotonic()
    result = consumer.consume("slow-report")
    elapsed = time.monotonic() - started
    report.check("first attempt times out and is queued", isinstance(result, Queued), repr(result))
    report.check("timeout fired near the configured 1s", 0.5 <= elapsed < 3.0, f"{elapsed:.2f}s")
    base_key = result.request.id.base_key
    report.check("upstream already received the request",
                 stack.upstream.invocations(base_key) == 1)
    # The gateway keeps working after the client hung up.
    stack.gateway.wait_for_state(base_key, "SUCCEEDED", timeout_s=15.0)
    drained = consumer.flush_queue()
    report.check("flush drained exactly the one request", len(drained) == 1, repr(drained))
    outcome = drained[0][1]
    report.check("retry is served from the middleware cache",
                 outcome.state is OutcomeState.CACHED, repr(outcome))
    report.check("cached payload is the full correct body",
                 outcome.payload == deterministic_payload(SLOW_BODY_BYTES))
    report.check("still exactly one upstream invocation",
                 stack.upstream.invocations(base_key) == 1)
    stack.upstream.set_faults({})
    report.terminal = "CACHED"
    return report


SCENARIOS = {
    "all-reachable": scenario_all_reachable,
    "cloud-unreachable": scenario_cloud_unreachable,
    "cloud-server-error": scenario_cloud_server_error,
    "middleware-unreachable": scenario_middleware_unreachable,
    "mobile-unreachable": scenario_mobile_unreachable,
    "client-timeout": scenario_client_timeout,
}

EXPECTED_TERMINALS = ["SUCCEEDED", "FAILED", "FAILED", "QUEUED", "QUEUED", "CACHED"]


def run_scenario(name: str, stack: HarnessStack | None = None) -> ScenarioReport:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}")
    own_stack = stack is None
    if own_stack:
        stack = HarnessStack(test_hooks=True)
    try:
        started = time.monotonic()
        report = SCENARIOS[name](stack)
        report.elapsed_s = time.monotonic() - started
        return report
    finally:
        if own_stack:
            stack.close()


def run_all(only: str | None = None, stack: HarnessStack | None = None) -> list[ScenarioReport]:
    names = [only] if only else list(SCENARIOS)
    own_stack = stack is None
    if own_stack:
        stack = HarnessStack(test_hooks=True)
    reports = []
    try:
        for name in names:
            try:
                reports.append(run_scenario(name, stack))
            except ScenarioFailed as exc:
                exc.report.elapsed_s = 0.0
                reports.append(exc.report)
    finally:
        if own_stack:
            stack.close()
    return reports
