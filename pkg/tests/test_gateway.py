"""Gateway behavior over real sockets: proxying, dedup, caching, management."""

import concurrent.futures
import json
import threading
from urllib.parse import quote

import pytest
import requests

from rsam.gateway import AllowList
from rsam.protocol import Lifecycle, body_digest, encode_id, generate_client_id
from rsam.store import RequestRecord
from rsam.util import now_ms


def fresh_headers(path="/svc/orders", device="gw-dev", trial=1, forced=False, sent_at=None):
    cid = generate_client_id(device, sent_at or now_ms(), path, trial, forced)
    return cid, {"X-RSAM-Client-Id": encode_id(cid), "X-RSAM-Forced": "1" if forced else "0"}


def set_faults(env, script):
    requests.post(f"http://127.0.0.1:{env.upstream.server_address[1]}/__fault",
                  json=script, timeout=5).raise_for_status()


class TestAllowList:
    def test_load_and_match(self, tmp_path):
        f = tmp_path / "allow.txt"
        f.write_text("# comment\nPOST /orders\nGET /feeds/*\n")
        allow = AllowList.load(f)
        assert allow.permits("POST", "/orders")
        assert not allow.permits("GET", "/orders")
        assert not allow.permits("POST", "/orders/123")
        assert allow.permits("GET", "/feeds/posts")
        assert allow.permits("get", "/feeds/")

    def test_empty_file_rejected(self, tmp_path):
        f = tmp_path / "allow.txt"
        f.write_text("# nothing\n")
        with pytest.raises(ValueError):
            AllowList.load(f)

    def test_bad_line_rejected(self, tmp_path):
        f = tmp_path / "allow.txt"
        f.write_text("POST\n")
        with pytest.raises(ValueError):
            AllowList.load(f)


class TestProxyBasics:
    def test_first_time_success_byte_identical(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 512}}})
        cid, headers = fresh_headers()
        resp = requests.post(f"{gateway_env.url}/proxy/svc/orders", data=b"abc", headers=headers)
        assert resp.status_code == 200
        assert resp.headers["X-RSAM-State"] == "SUCCEEDED"
        assert resp.headers["X-RSAM-Base-Key"] == cid.base_key
        assert len(resp.content) == 512
        stored = gateway_env.store.latest_succeeded_response(cid.base_key)
        assert stored.body == resp.content

    def test_duplicate_served_from_cache_without_upstream(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 128}}})
        cid, headers = fresh_headers()
        url = f"{gateway_env.url}/proxy/svc/orders"
        first = requests.post(url, data=b"abc", headers=headers)
        again = requests.post(url, data=b"abc", headers=headers)
        assert again.headers["X-RSAM-State"] == "CACHED"
        assert again.content == first.content
        stats = requests.get(
            f"http://127.0.0.1:{gateway_env.upstream.server_address[1]}/__stats").json()
        assert stats["by_key"][cid.base_key] == 1

    def test_upstream_unreachable_fails_502(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"reachable": False}}})
        cid, headers = fresh_headers()
        resp = requests.post(f"{gateway_env.url}/proxy/svc/orders", data=b"x", headers=headers)
        assert resp.status_code == 502
        assert resp.headers["X-RSAM-State"] == "FAILED"
        assert gateway_env.store.get_request(cid.base_key).lifecycle is Lifecycle.FAILED
        set_faults(gateway_env, {})

    def test_upstream_error_status_passed_through(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"status": 503, "body_bytes": 64}}})
        cid, headers = fresh_headers()
        resp = requests.post(f"{gateway_env.url}/proxy/svc/orders", data=b"x", headers=headers)
        assert resp.status_code == 503
        assert resp.headers["X-RSAM-State"] == "FAILED"
        assert len(resp.content) == 64  # error body forwarded untouched
        set_faults(gateway_env, {})

    def test_failed_then_retry_with_same_id_reforwards(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"status": 500}}})
        cid, headers = fresh_headers()
        url = f"{gateway_env.url}/proxy/svc/orders"
        assert requests.post(url, data=b"x", headers=headers).status_code == 500
        set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 16}}})
        retry_cid = cid.next_trial()
        resp = requests.post(url, data=b"x", headers={
            "X-RSAM-Client-Id": encode_id(retry_cid), "X-RSAM-Forced": "0"})
        assert resp.headers["X-RSAM-State"] == "SUCCEEDED"
        assert gateway_env.store.get_request(cid.base_key).trial_count == 2


class TestProxyRejections:
    def test_filter_rejects_unlisted_route(self, gateway_env):
        _, headers = fresh_headers(path="/private/x")
        resp = requests.post(f"{gateway_env.url}/proxy/private/x", data=b"", headers=headers)
        assert resp.status_code == 403

    def test_missing_id_rejected(self, gateway_env):
        resp = requests.post(f"{gateway_env.url}/proxy/svc/orders", data=b"x")
        assert resp.status_code == 400

    def test_malformed_id_rejected(self, gateway_env):
        resp = requests.post(
            f"{gateway_env.url}/proxy/svc/orders",
            data=b"x",
            headers={"X-RSAM-Client-Id": "garbage"},
        )
        assert resp.status_code == 400

    def test_clock_skew_rejected(self, gateway_env):
        ten_min = 10 * 60 * 1000
        _, headers = fresh_headers(sent_at=now_ms() + ten_min)
        resp = requests.post(f"{gateway_env.url}/proxy/svc/orders", data=b"x", headers=headers)
        assert resp.status_code == 400
        assert "skew" in resp.json()["error"]

    def test_body_digest_mismatch_is_collision(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 8}}})
        cid, headers = fresh_headers()
        url = f"{gateway_env.url}/proxy/svc/orders"
        requests.post(url, data=b"original", headers=headers)
        resp = requests.post(url, data=b"tampered", headers=headers)
        assert resp.status_code == 422
        assert resp.headers["X-RSAM-State"] == "DOUBT"
        assert resp.content == b""

    def test_oversized_body_rejected(self, gateway_env):
        gateway_env.config.max_body_bytes = 1024
        _, headers = fresh_headers()
        try:
            resp = requests.post(
                f"{gateway_env.url}/proxy/svc/orders", data=b"z" * 4096, headers=headers
            )
            assert resp.status_code == 413
        except requests.exceptions.ConnectionError:
            pass  # early close while the client is still writing is acceptable
        finally:
            gateway_env.config.max_body_bytes = 16 * 1024 * 1024


class TestDoubtWindow:
    def seed_window(self, env, method="POST"):
        cid = generate_client_id("gw-dev", now_ms(), "/svc/orders")
        body = b"window"
        env.store.put_request(
            RequestRecord(
                base_key=cid.base_key,
                device_id="gw-dev",
                method=method,
                target_path="/svc/orders",
                body_digest=body_digest(body),
                body=body,
                lifecycle=Lifecycle.FORWARDED,
                trial_count=1,
                forced=False,
                created_at=now_ms(),
                forwarded_at=now_ms(),
            )
        )
        return cid, body

    def test_nonidempotent_replay_yields_doubt(self, gateway_env):
        cid, body = self.seed_window(gateway_env)
        resp = requests.post(
            f"{gateway_env.url}/proxy/svc/orders",
            data=body,
            headers={"X-RSAM-Client-Id": encode_id(cid.next_trial())},
        )
        assert resp.status_code == 409
        assert resp.headers["X-RSAM-State"] == "DOUBT"
        assert resp.content == b""
        assert resp.headers["X-RSAM-Message"]

    def test_idempotent_replay_reforwards(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 8}}})
        cid, body = self.seed_window(gateway_env, method="GET")
        resp = requests.get(
            f"{gateway_env.url}/proxy/svc/orders",
            data=body,
            headers={"X-RSAM-Client-Id": encode_id(cid.next_trial())},
        )
        assert resp.headers["X-RSAM-State"] == "SUCCEEDED"

    def test_forced_replay_overrides_doubt(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 8}}})
        cid, body = self.seed_window(gateway_env)
        resp = requests.post(
            f"{gateway_env.url}/proxy/svc/orders",
            data=body,
            headers={"X-RSAM-Client-Id": encode_id(cid.next_trial()), "X-RSAM-Forced": "1"},
        )
        assert resp.headers["X-RSAM-State"] == "SUCCEEDED"


class TestForced:
    def test_forced_submissions_always_hit_upstream(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 32}}})
        cid, headers = fresh_headers(forced=True)
        url = f"{gateway_env.url}/proxy/svc/orders"
        states = [
            requests.post(url, data=b"x", headers=headers).headers["X-RSAM-State"]
            for _ in range(4)
        ]
        assert states == ["SUCCEEDED"] * 4
        stats = requests.get(
            f"http://127.0.0.1:{gateway_env.upstream.server_address[1]}/__stats").json()
        assert stats["by_key"][cid.base_key] == 4


class TestSingleFlight:
    def test_concurrent_duplicates_execute_once(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 64, "latency_ms": 300}}})
        cid, headers = fresh_headers(device="flight-dev")
        url = f"{gateway_env.url}/proxy/svc/orders"
        barrier = threading.Barrier(10)

        def submit():
            barrier.wait()
            with requests.Session() as session:
                resp = session.post(url, data=b"dup", headers=headers, timeout=30)
                return resp.headers["X-RSAM-State"], resp.content

        with concurrent.futures.ThreadPoolExecutor(max_workers=10) as pool:
            outcomes = list(pool.map(lambda _: submit(), range(10)))

        states = sorted(state for state, _ in outcomes)
        assert states.count("SUCCEEDED") == 1
        assert states.count("CACHED") == 9
        bodies = {body for _, body in outcomes}
        assert len(bodies) == 1
        stats = requests.get(
            f"http://127.0.0.1:{gateway_env.upstream.server_address[1]}/__stats").json()
        assert stats["by_key"][cid.base_key] == 1
        set_faults(gateway_env, {})

    def test_losers_observe_failure_without_reforwarding(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"status": 500, "latency_ms": 300}}})
        cid, headers = fresh_headers(device="flight-fail")
        url = f"{gateway_env.url}/proxy/svc/orders"
        barrier = threading.Barrier(5)

        def submit():
            barrier.wait()
            with requests.Session() as session:
                return session.post(url, data=b"dup", headers=headers, timeout=30)

        with concurrent.futures.ThreadPoolExecutor(max_workers=5) as pool:
            responses = list(pool.map(lambda _: submit(), range(5)))

        assert all(r.headers["X-RSAM-State"] == "FAILED" for r in responses)
        stats = requests.get(
            f"http://127.0.0.1:{gateway_env.upstream.server_address[1]}/__stats").json()
        assert stats["by_key"][cid.base_key] == 1
        set_faults(gateway_env, {})


class TestManagementApi:
    def seed_success(self, env, device="mgmt-dev"):
        set_faults(env, {"routes": {"/svc/orders": {"body_bytes": 16}}})
        cid, headers = fresh_headers(device=device)
        requests.post(f"{env.url}/proxy/svc/orders", data=b"x", headers=headers)
        return cid

    def test_list_requests_shape(self, gateway_env):
        cid = self.seed_success(gateway_env)
        items = requests.get(f"{gateway_env.url}/rsam/requests").json()["requests"]
        assert len(items) == 1
        item = items[0]
        assert set(item) == {
            "base_key", "device_id", "method", "target_path", "state",
            "trial_count", "created_at", "forwarded_at", "completed_at", "latest_outcome",
        }
        assert item["base_key"] == cid.base_key
        assert item["state"] == "SUCCEEDED"
        assert item["latest_outcome"] == "SUCCESS"

    def test_list_filters(self, gateway_env):
        self.seed_success(gateway_env, device="devA")
        self.seed_success(gateway_env, device="devB")
        url = f"{gateway_env.url}/rsam/requests"
        assert len(requests.get(url, params={"device_id": "devA"}).json()["requests"]) == 1
        assert requests.get(url, params={"state": "FAILED"}).json()["requests"] == []

    def test_retry_failed_record(self, gateway_env):
        set_faults(gateway_env, {"routes": {"/svc/orders": {"status": 500}}})
        cid, headers = fresh_headers(device="retry-dev")
        requests.post(f"{gateway_env.url}/proxy/svc/orders", data=b"x", headers=headers)
        set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 16}}})
        resp = requests.post(
            f"{gateway_env.url}/rsam/requests/{quote(cid.base_key, safe='')}/retry"
        )
        assert resp.status_code == 200
        assert resp.json()["outcome"] == "SUCCEEDED"
        assert resp.json()["record"]["state"] == "SUCCEEDED"

    def test_retry_succeeded_record_is_not_retryable(self, gateway_env):
        cid = self.seed_success(gateway_env)
        resp = requests.post(
            f"{gateway_env.url}/rsam/requests/{quote(cid.base_key, safe='')}/retry"
        )
        assert resp.status_code == 409
        assert resp.json()["code"] == "NOT_RETRYABLE"

    def test_retry_unknown_key(self, gateway_env):
        resp = requests.post(f"{gateway_env.url}/rsam/requests/nope/retry")
        assert resp.status_code == 404

    def test_delete_hides_record_and_resets_identity(self, gateway_env):
        cid = self.seed_success(gateway_env)
        encoded = quote(cid.base_key, safe="")
        assert requests.delete(f"{gateway_env.url}/rsam/requests/{encoded}").status_code == 200
        assert requests.get(f"{gateway_env.url}/rsam/requests").json()["requests"] == []
        # double delete -> gone
        assert requests.delete(f"{gateway_env.url}/rsam/requests/{encoded}").status_code == 404
        # same identity again is a first-time forward, not a cache hit
        resp = requests.post(
            f"{gateway_env.url}/proxy/svc/orders",
            data=b"x",
            headers={"X-RSAM-Client-Id": encode_id(cid.next_trial())},
        )
        assert resp.headers["X-RSAM-State"] == "SUCCEEDED"


class TestCacheTtl:
    def test_expired_cache_reforwards(self, gateway_env):
        gateway_env.config.cache_ttl_s = 0.0  # everything is instantly stale
        try:
            set_faults(gateway_env, {"routes": {"/svc/orders": {"body_bytes": 16}}})
            cid, headers = fresh_headers(device="ttl-dev")
            url = f"{gateway_env.url}/proxy/svc/orders"
            requests.post(url, data=b"x", headers=headers)
            resp = requests.post(url, data=b"x", headers=headers)
            assert resp.headers["X-RSAM-State"] == "SUCCEEDED"  # re-executed
            stats = requests.get(
                f"http://127.0.0.1:{gateway_env.upstream.server_address[1]}/__stats").json()
            assert stats["by_key"][cid.base_key] == 2
        finally:
            gateway_env.config.cache_ttl_s = None


class TestControlHooks:
    def test_fail_next_returns_500_without_state(self, gateway_env):
        requests.post(f"{gateway_env.url}/__control/fail-next", json={})
        _, headers = fresh_headers()
        resp = requests.post(f"{gateway_env.url}/proxy/svc/orders", data=b"x", headers=headers)
        assert resp.status_code == 500
        assert "X-RSAM-State" not in resp.headers

    def test_crash_rejects_unknown_point(self, gateway_env):
        resp = requests.post(f"{gateway_env.url}/__control/crash", json={"point": "bogus"})
        assert resp.status_code == 400

    def test_health(self, gateway_env):
        assert requests.get(f"{gateway_env.url}/rsam/health").json() == {"ok": True}

    def test_unknown_route_404(self, gateway_env):
        assert requests.get(f"{gateway_env.url}/nowhere").status_code == 404


class TestDashboardStatics:
    def test_bundle_served_when_built(self, gateway_env):
        from rsam.gateway import default_dashboard_dir

        gateway_env.config.dashboard_dir = default_dashboard_dir()
        if gateway_env.config.dashboard_dir is None:
            pytest.skip("dashboard bundle not built")
        index = requests.get(f"{gateway_env.url}/dashboard/")
        assert index.status_code == 200
        assert "text/html" in index.headers["Content-Type"]
        script = requests.get(f"{gateway_env.url}/dashboard/main.js")
        assert script.status_code == 200

    def test_path_traversal_blocked(self, gateway_env):
        from rsam.gateway import default_dashboard_dir

        gateway_env.config.dashboard_dir = default_dashboard_dir()
        if gateway_env.config.dashboard_dir is None:
            pytest.skip("dashboard bundle not built")
        resp = requests.get(f"{gateway_env.url}/dashboard/%2e%2e/protocol.py")
        assert resp.status_code == 404
