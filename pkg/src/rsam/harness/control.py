"""Supervision of the gateway process and the mock upstream for test runs.

The gateway always runs as a real subprocess so that crash injection and
restart-durability checks exercise the same code paths a deployment would.
The mock upstream lives in a thread of the harness process and therefore
survives gateway restarts.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
import time
from pathlib import Path
from urllib.parse import quote

import requests

from ..client import ReliableConsumer, ServiceRegistry
from ..util import free_port
from .upstream import MockUpstream, start_in_thread

DEFAULT_ALLOW_LIST = """\
# routes used by the harness
GET /svc/*
POST /svc/*
PUT /svc/*
DELETE /svc/*
GET /bench/*
POST /bench/*
"""


def wait_http_ok(url: str, timeout_s: float = 10.0) -> None:
    deadline = time.monotonic() + timeout_s
    last_error: Exception | None = None
    while time.monotonic() < deadline:
        try:
            if requests.get(url, timeout=0.5).status_code == 200:
                return
        except requests.exceptions.RequestException as exc:
            last_error = exc
        time.sleep(0.05)
    raise RuntimeError(f"{url} did not come up within {timeout_s}s: {last_error}")


class ManagedUpstream:
    def __init__(self, host: str = "127.0.0.1"):
        self.server: MockUpstream
        self.server, self._thread = start_in_thread(host, 0)
        self.host, self.port = self.server.server_address[:2]
        self.url = f"http://{self.host}:{self.port}"

    def set_faults(self, script: dict) -> None:
        requests.post(f"{self.url}/__fault", json=script, timeout=5).raise_for_status()

    def stats(self) -> dict:
        return requests.get(f"{self.url}/__stats", timeout=5).json()

    def invocations(self, base_key: str) -> int:
        return self.stats()["by_key"].get(base_key, 0)

    def stop(self) -> None:
        self.server.shutdown()


class ManagedGateway:
    """A gateway subprocess bound to a fixed port and store directory."""

    def __init__(
        self,
        store_dir: Path,
        upstream_url: str,
        allow_list_path: Path,
        *,
        timeout_ms: int = 45_000,
        cache_ttl_s: float | None = None,
        test_hooks: bool = False,
        port: int | None = None,
    ):
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self.upstream_url = upstream_url
        self.allow_list_path = Path(allow_list_path)
        self.timeout_ms = timeout_ms
        self.cache_ttl_s = cache_ttl_s
        self.test_hooks = test_hooks
        self.port = port or free_port()
        self.url = f"http://127.0.0.1:{self.port}"
        self.proc: subprocess.Popen | None = None
        self._log = self.store_dir / "gateway.log"

    def start(self, wait: bool = True) -> None:
        cmd = [
            sys.executable,
            "-m",
            "rsam.gateway",
            "--listen",
            f"127.0.0.1:{self.port}",
            "--upstream",
            self.upstream_url,
            "--allow-list",
            str(self.allow_list_path),
            "--store",
            str(self.store_dir),
            "--timeout-ms",
            str(self.timeout_ms),
        ]
        if self.cache_ttl_s is not None:
            cmd += ["--cache-ttl-s", str(self.cache_ttl_s)]
        if self.test_hooks:
            cmd.append("--test-hooks")
        log = open(self._log, "ab")
        self.proc = subprocess.Popen(cmd, stdout=log, stderr=log)
        if wait:
            wait_http_ok(f"{self.url}/rsam/health")

    def stop(self) -> None:
        if self.proc is None:
            return
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait(timeout=5)
        self.proc = None

    def restart(self) -> None:
        self.stop()
        self.start()

    def wait_exit(self, timeout_s: float = 10.0) -> int:
        assert self.proc is not None
        return self.proc.wait(timeout=timeout_s)

    # -- control hooks ----------------------------------------------------

    def arm_crash(self, point: str) -> None:
        requests.post(
            f"{self.url}/__control/crash", json={"point": point}, timeout=5
        ).raise_for_status()

    def inject_fail_next(self) -> None:
        requests.post(f"{self.url}/__control/fail-next", json={}, timeout=5).raise_for_status()

    # -- management API ----------------------------------------------------

    def list_requests(self, device_id: str | None = None, state: str | None = None) -> list[dict]:
        params = {}
        if device_id:
            params["device_id"] = device_id
        if state:
            params["state"] = state
        resp = requests.get(f"{self.url}/rsam/requests", params=params, timeout=10)
        resp.raise_for_status()
        return resp.json()["requests"]

    def record(self, base_key: str) -> dict | None:
        for item in self.list_requests():
            if item["base_key"] == base_key:
                return item
        return None

    def retry(self, base_key: str) -> requests.Response:
        return requests.post(
            f"{self.url}/rsam/requests/{quote(base_key, safe='')}/retry", timeout=60
        )

    def delete(self, base_key: str) -> requests.Response:
        return requests.delete(
            f"{self.url}/rsam/requests/{quote(base_key, safe='')}", timeout=10
        )

    def wait_for_state(self, base_key: str, state: str, timeout_s: float = 15.0) -> dict:
        deadline = time.monotonic() + timeout_s
        last: dict | None = None
        while time.monotonic() < deadline:
            last = self.record(base_key)
            if last is not None and last["state"] == state:
                return last
            time.sleep(0.1)
        raise TimeoutError(f"{base_key} never reached {state}; last seen: {last}")

    def tail_log(self, lines: int = 40) -> str:
        if not self._log.exists():
            return ""
        return "\n".join(self._log.read_text(errors="replace").splitlines()[-lines:])


class HarnessStack:
    """Mock upstream + gateway + a consumer factory on one temp directory."""

    def __init__(
        self,
        *,
        test_hooks: bool = False,
        timeout_ms: int = 45_000,
        cache_ttl_s: float | None = None,
        allow_list: str = DEFAULT_ALLOW_LIST,
        root: Path | None = None,
    ):
        self._tmp = None
        if root is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="rsam-harness-")
            root = Path(self._tmp.name)
        self.root = Path(root)
        self.upstream = ManagedUpstream()
        allow_path = self.root / "allow-list.txt"
        allow_path.write_text(allow_list)
        self.gateway = ManagedGateway(
            self.root / "store",
            self.upstream.url,
            allow_path,
            timeout_ms=timeout_ms,
            cache_ttl_s=cache_ttl_s,
            test_hooks=test_hooks,
        )
        self.gateway.start()
        self._consumers: list[ReliableConsumer] = []

    def apply_script(self, script: dict) -> None:
        """Install a fault script, interpreting supervisor-level directives.

        ``crash_gateway_after_forward`` cannot be enforced by the upstream
        itself; when any route requests it, the gateway's one-shot crash
        hook is armed here.
        """
        self.upstream.set_faults(script)
        directives = [script.get("default", {}), *script.get("routes", {}).values()]
        if any(d.get("crash_gateway_after_forward") for d in directives):
            self.gateway.arm_crash("after-forward-before-response")

    def consumer(
        self,
        device_id: str,
        *,
        timeout_s: float = 45.0,
        middleware_url: str | None = None,
        probe=None,
    ) -> ReliableConsumer:
        registry = ServiceRegistry(
            middleware_url or self.gateway.url, self.upstream.url
        )
        consumer = ReliableConsumer(
            registry,
            device_id,
            self.root / "clients",
            timeout_s=timeout_s,
            probe=probe,
        )
        self._consumers.append(consumer)
        return consumer

    def close(self) -> None:
        for consumer in self._consumers:
            consumer.close()
        self.gateway.stop()
        self.upstream.stop()
        if self._tmp is not None:
            self._tmp.cleanup()

    def __enter__(self) -> "HarnessStack":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def pretty(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True)
