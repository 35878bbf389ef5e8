"""Seed a gateway store with demo records for dashboard work.

Creates one FAILED request (with its failure response) and one request
stranded in the doubt window (forwarded, no response). Run this before
starting a gateway on the same store directory.
"""

from __future__ import annotations

import argparse
import json

from ..protocol import Lifecycle, body_digest, generate_client_id
from ..store import (
    RequestRecord,
    RequestStore,
    ResponseOutcome,
    ResponseRecord,
)
from ..util import now_ms


def seed_demo(
    store_dir: str,
    *,
    device_id: str = "demo-device",
    target: str = "/svc/orders",
) -> dict[str, str]:
    store = RequestStore(store_dir)
    now = now_ms()

    failed_id = generate_client_id(device_id, now - 60_000, target)
    failed_body = b'{"item": "retry me"}'
    store.put_request(
        RequestRecord(
            base_key=failed_id.base_key,
            device_id=device_id,
            method="POST",
            target_path=target,
            body_digest=body_digest(failed_body),
            body=failed_body,
            lifecycle=Lifecycle.FORWARDED,
            trial_count=1,
            forced=False,
            created_at=now - 60_000,
            forwarded_at=now - 59_000,
        )
    )
    store.add_response(
        ResponseRecord(
            base_key=failed_id.base_key,
            status_code=500,
            body=b'{"error": "upstream was down"}',
            content_type="application/json",
            outcome=ResponseOutcome.FAILURE,
            received_at=now - 58_000,
            trial=1,
        ),
        Lifecycle.FAILED,
        now - 58_000,
    )

    window_id = generate_client_id(device_id, now - 30_000, target)
    window_body = b'{"item": "outcome unknown"}'
    store.put_request(
        RequestRecord(
            base_key=window_id.base_key,
            device_id=device_id,
            method="POST",
            target_path=target,
            body_digest=body_digest(window_body),
            body=window_body,
            lifecycle=Lifecycle.FORWARDED,
            trial_count=1,
            forced=False,
            created_at=now - 30_000,
            forwarded_at=now - 29_000,
        )
    )
    store.close()
    return {"failed": failed_id.base_key, "window": window_id.base_key}


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="rsam-seed", description=__doc__)
    parser.add_argument("--store", required=True, help="gateway store directory")
    parser.add_argument("--device-id", default="demo-device")
    parser.add_argument("--target", default="/svc/orders")
    args = parser.parse_args(argv)
    keys = seed_demo(args.store, device_id=args.device_id, target=args.target)
    print(json.dumps(keys))


if __name__ == "__main__":
    main()
