"""Shared fixtures: in-process gateway + mock upstream on real sockets."""

import sys
import threading
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracle_decide

from rsam.gateway import AllowList, Gateway, GatewayConfig, RsamHTTPServer
from rsam.harness.upstream import start_in_thread
from rsam.store import RequestStore
from rsam.util import free_port

TEST_ALLOW_LIST = [
    "POST /svc/*",
    "GET /svc/*",
    "PUT /svc/*",
    "DELETE /svc/*",
    "GET /bench/*",
]


@pytest.fixture
def mock_upstream():
    server, _thread = start_in_thread()
    yield server
    server.shutdown()


@pytest.fixture
def gateway_env(tmp_path, mock_upstream):
    """A live gateway thread in front of the mock upstream."""
    allow_path = tmp_path / "allow.txt"
    allow_path.write_text("\n".join(TEST_ALLOW_LIST) + "\n")
    config = GatewayConfig(
        listen_host="127.0.0.1",
        listen_port=free_port(),
        upstream_base_url=f"http://127.0.0.1:{mock_upstream.server_address[1]}",
        allow_list=AllowList.load(allow_path),
        store_dir=str(tmp_path / "store"),
        upstream_timeout_ms=10_000,
        test_hooks=True,
    )
    store = RequestStore(config.store_dir)
    gateway = Gateway(config, store)
    server = RsamHTTPServer((config.listen_host, config.listen_port), gateway)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    env = type(
        "GatewayEnv",
        (),
        {
            "gateway": gateway,
            "store": store,
            "upstream": mock_upstream,
            "url": f"http://{config.listen_host}:{config.listen_port}",
            "config": config,
        },
    )
    yield env
    server.shutdown()
    store.close()
