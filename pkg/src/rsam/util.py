"""Small shared helpers used across the gateway, client and harness."""

from __future__ import annotations

import hashlib
import socket
import time


def now_ms() -> int:
    return int(time.time() * 1000)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def free_port(host: str = "127.0.0.1") -> int:
    """Ask the kernel for an ephemeral port that is currently free."""
    with socket.socket() as sock:
        sock.bind((host, 0))
        return sock.getsockname()[1]
