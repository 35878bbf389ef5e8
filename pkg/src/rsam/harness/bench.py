"""Overhead benchmark: direct path versus middleware path.

For each payload class the same deterministic body is fetched twice, once
straight from the upstream and once through the gateway, measuring:

  * request size on the wire (request line + headers + body),
  * response body size,
  * elapsed wall-clock time (median over repetitions).

The summary reports the added request bytes (which must not depend on the
payload class), the response-size delta (expected 0: bodies are forwarded
byte-identically) and the time ratio middleware/direct.
"""

from __future__ import annotations

import csv
import hashlib
import statistics
import time
from dataclasses import dataclass, asdict
from pathlib import Path
from urllib.parse import urlsplit

import requests

from ..protocol import encode_id, generate_client_id
from ..util import now_ms
from .control import HarnessStack
from .upstream import RESPONSE_BYTES_HEADER

BENCH_PATH = "/bench/payload"
DIRECT = "DIRECT"
MIDDLEWARE = "MIDDLEWARE"

_SIZE_SUFFIXES = {"": 1, "b": 1, "k": 1024, "m": 1024 * 1024, "g": 1024 * 1024 * 1024}


def parse_sizes(arg: str) -> list[tuple[str, int]]:
    """'1k,64k,1m' -> [('1k', 1024), ('64k', 65536), ('1m', 1048576)]."""
    sizes = []
    for token in arg.split(","):
        token = token.strip().lower()
        if not token:
            continue
        suffix = token[-1] if token[-1] in _SIZE_SUFFIXES else ""
        number = token[: len(token) - len(suffix)] if suffix else token
        sizes.append((token, int(number) * _SIZE_SUFFIXES[suffix or "b"]))
    if not sizes:
        raise ValueError(f"no sizes in {arg!r}")
    return sizes


def request_wire_size(prep: requests.PreparedRequest) -> int:
    """Bytes this request occupies on the wire, headers included."""
    parts = urlsplit(prep.url)
    host = parts.hostname or ""
    if parts.port and parts.port not in (80, 443):
        host = f"{host}:{parts.port}"
    size = len(f"{prep.method} {prep.path_url} HTTP/1.1\r\n")
    size += len(f"Host: {host}\r\n")
    for key, value in prep.headers.items():
        size += len(f"{key}: {value}\r\n")
    size += len("\r\n")
    if prep.body:
        size += len(prep.body)
    return size


@dataclass
class BenchRow:
    function_name: str
    path: str  # DIRECT or MIDDLEWARE
    request_size: int
    response_size: int
    elapsed_ms: float
    body_sha256: str


@dataclass
class BenchSummary:
    size_label: str
    size_bytes: int
    direct_request_size: int
    middleware_request_size: int
    overhead_bytes: int
    response_delta: int
    tc_ms: float  # median direct time
    tm_ms: float  # median middleware time
    ratio: float
    direct_sha256: str
    middleware_sha256: str


def _measure(
    session: requests.Session,
    url: str,
    headers: dict[str, str],
) -> tuple[int, int, float, str]:
    req = requests.Request("GET", url, headers=headers)
    prep = session.prepare_request(req)
    wire = request_wire_size(prep)
    start = time.perf_counter()
    resp = session.send(prep)
    body = resp.content
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    resp.raise_for_status()
    return wire, len(body), elapsed_ms, hashlib.sha256(body).hexdigest()


def run_bench(
    stack: HarnessStack,
    sizes: list[tuple[str, int]],
    latency_ms: int,
    reps: int = 5,
    *,
    device_id: str = "bench-device",
) -> tuple[list[BenchRow], list[BenchSummary]]:
    stack.upstream.set_faults({"routes": {BENCH_PATH: {"latency_ms": latency_ms}}})
    direct_url = stack.upstream.url + BENCH_PATH
    middleware_url = stack.gateway.url + "/proxy" + BENCH_PATH

    rows: list[BenchRow] = []
    summaries: list[BenchSummary] = []
    with requests.Session() as session:
        for label, n in sizes:
            per_path: dict[str, dict] = {}
            for path_kind, url in ((DIRECT, direct_url), (MIDDLEWARE, middleware_url)):
                times: list[float] = []
                wire_sizes: set[int] = set()
                resp_size = 0
                sha = ""
                for rep in range(reps + 1):  # first iteration is warm-up
                    headers = {RESPONSE_BYTES_HEADER: str(n)}
                    if path_kind == MIDDLEWARE:
                        # Fresh identity per attempt: the middleware path must
                        # do its full forwarding work on every repetition.
                        cid = generate_client_id(device_id, now_ms(), BENCH_PATH)
                        headers["X-RSAM-Client-Id"] = encode_id(cid)
                        headers["X-RSAM-Forced"] = "0"
                    wire, resp_size, elapsed, sha = _measure(session, url, headers)
                    if rep == 0:
                        continue
                    times.append(elapsed)
                    wire_sizes.add(wire)
                if len(wire_sizes) != 1:
                    raise RuntimeError(f"request size varied within a class: {wire_sizes}")
                wire = wire_sizes.pop()
                rows.append(
                    BenchRow(
                        function_name=f"fetch-{label}",
                        path=path_kind,
                        request_size=wire,
                        response_size=resp_size,
                        elapsed_ms=statistics.median(times),
                        body_sha256=sha,
                    )
                )
                per_path[path_kind] = {
                    "wire": wire,
                    "resp": resp_size,
                    "median": statistics.median(times),
                    "sha": sha,
                }
            tc = per_path[DIRECT]["median"]
            tm = per_path[MIDDLEWARE]["median"]
            summaries.append(
                BenchSummary(
                    size_label=label,
                    size_bytes=n,
                    direct_request_size=per_path[DIRECT]["wire"],
                    middleware_request_size=per_path[MIDDLEWARE]["wire"],
                    overhead_bytes=per_path[MIDDLEWARE]["wire"] - per_path[DIRECT]["wire"],
                    response_delta=per_path[MIDDLEWARE]["resp"] - per_path[DIRECT]["resp"],
                    tc_ms=tc,
                    tm_ms=tm,
                    ratio=tm / tc if tc else float("inf"),
                    direct_sha256=per_path[DIRECT]["sha"],
                    middleware_sha256=per_path[MIDDLEWARE]["sha"],
                )
            )
    stack.upstream.set_faults({})
    return rows, summaries


def write_csv(rows: list[BenchRow], out_path: str | Path) -> None:
    with open(out_path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(asdict(rows[0]).keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def format_table(summaries: list[BenchSummary]) -> str:
    header = (
        f"{'size':>6} | {'direct req B':>12} | {'mw req B':>10} | {'overhead B':>10} |"
        f" {'resp delta':>10} | {'TC ms':>9} | {'TM ms':>9} | {'TM/TC':>6}"
    )
    lines = [header, "-" * len(header)]
    for s in summaries:
        lines.append(
            f"{s.size_label:>6} | {s.direct_request_size:>12} | {s.middleware_request_size:>10} |"
            f" {s.overhead_bytes:>10} | {s.response_delta:>10} |"
            f" {s.tc_ms:>9.1f} | {s.tm_ms:>9.1f} | {s.ratio:>6.3f}"
        )
    overheads = {s.overhead_bytes for s in summaries}
    lines.append("")
    lines.append(
        f"added request bytes: {sorted(overheads)}"
        f" ({'constant' if len(overheads) == 1 else 'VARIES'} across payload classes)"
    )
    return "\n".join(lines)
