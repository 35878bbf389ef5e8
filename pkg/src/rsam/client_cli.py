"""Thin command-line wrapper around the consumer SDK for scripting.

State (offline queue, outcome journal) lives under --store, so send, retry,
flush and status compose across invocations the same way a long-lived
embedded consumer would behave.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .client import Queued, ReliableConsumer, ServiceRegistry
from .protocol import RsamOutcome, ServiceDescriptor


def _consumer(args: argparse.Namespace) -> ReliableConsumer:
    registry = ServiceRegistry(args.middleware, args.cloud)
    probe = (lambda: False) if getattr(args, "offline", False) else None
    return ReliableConsumer(
        registry,
        args.device_id,
        Path(args.store),
        timeout_s=args.timeout_s,
        probe=probe,
    )


def _emit(result: RsamOutcome | Queued, out_path: str | None) -> dict:
    if isinstance(result, Queued):
        return {
            "result": "QUEUED",
            "base_key": result.request.id.base_key,
            "reason": result.reason,
        }
    payload_info = {
        "payload_bytes": len(result.payload),
        "payload_sha256": hashlib.sha256(result.payload).hexdigest(),
    }
    if out_path:
        Path(out_path).write_bytes(result.payload)
        payload_info["payload_file"] = out_path
    return {
        "result": result.state.value,
        "base_key": result.base_key,
        "message": result.message,
        **payload_info,
    }


def cmd_send(args: argparse.Namespace) -> int:
    consumer = _consumer(args)
    descriptor = ServiceDescriptor(
        name=args.service,
        method=args.method,
        path_template=args.path,
        forced=args.forced,
        direct=args.direct,
    )
    consumer.registry.register(descriptor)
    body = b""
    if args.body is not None:
        body = args.body.encode()
    elif args.body_file:
        body = Path(args.body_file).read_bytes()
    params = dict(p.split("=", 1) for p in args.param or [])
    result = consumer.consume(args.service, params=params, body=body,
                              content_type=args.content_type)
    print(json.dumps(_emit(result, args.out)))
    consumer.close()
    return 0


def cmd_retry(args: argparse.Namespace) -> int:
    consumer = _consumer(args)
    try:
        result = consumer.retry_by_key(args.base_key)
    except Exception as exc:
        print(json.dumps({"error": str(exc)}))
        consumer.close()
        return 1
    print(json.dumps(_emit(result, args.out)))
    consumer.close()
    return 0


def cmd_flush(args: argparse.Namespace) -> int:
    consumer = _consumer(args)
    drained = consumer.flush_queue()
    lines = [
        {"base_key": qr.id.base_key, "result": outcome.state.value}
        for qr, outcome in drained
    ]
    print(json.dumps({"flushed": lines, "remaining": consumer.queue_depth()}))
    consumer.close()
    return 0


def cmd_status(args: argparse.Namespace) -> int:
    consumer = _consumer(args)
    print(json.dumps(consumer.status(), indent=None if args.compact else 2))
    consumer.close()
    return 0


def main(argv: list[str] | None = None) -> None:
    env = os.environ
    parser = argparse.ArgumentParser(prog="rsam-client", description=__doc__)
    parser.add_argument("--device-id", default=env.get("RSAM_DEVICE_ID", "cli-device"))
    parser.add_argument("--middleware", default=env.get("RSAM_MIDDLEWARE_URL", "http://127.0.0.1:8470"))
    parser.add_argument("--cloud", default=env.get("RSAM_CLOUD_URL", "http://127.0.0.1:8471"))
    parser.add_argument("--store", default=env.get("RSAM_CLIENT_STORE", "~/.rsam-client"))
    parser.add_argument("--timeout-s", type=float, default=float(env.get("RSAM_CLIENT_TIMEOUT_S", 45)))
    sub = parser.add_subparsers(dest="command", required=True)

    p_send = sub.add_parser("send", help="consume a service once")
    p_send.add_argument("--service", required=True)
    p_send.add_argument("--method", default="GET")
    p_send.add_argument("--path", required=True, help="target path template")
    p_send.add_argument("--param", action="append", help="name=value (repeatable)")
    p_send.add_argument("--body", default=None)
    p_send.add_argument("--body-file", default=None)
    p_send.add_argument("--content-type", default=None)
    p_send.add_argument("--forced", action="store_true")
    p_send.add_argument("--direct", action="store_true")
    p_send.add_argument("--offline", action="store_true", help="pretend the network is down")
    p_send.add_argument("--out", default=None, help="write the payload to this file")
    p_send.set_defaults(func=cmd_send)

    p_retry = sub.add_parser("retry", help="re-send a prior request by base_key")
    p_retry.add_argument("--base-key", required=True)
    p_retry.add_argument("--out", default=None)
    p_retry.set_defaults(func=cmd_retry)

    p_flush = sub.add_parser("flush", help="drain the offline queue")
    p_flush.add_argument("--offline", action="store_true")
    p_flush.set_defaults(func=cmd_flush)

    p_status = sub.add_parser("status", help="show queue and recent outcomes")
    p_status.add_argument("--compact", action="store_true")
    p_status.set_defaults(func=cmd_status)

    args = parser.parse_args(argv)
    args.store = str(Path(args.store).expanduser())
    sys.exit(args.func(args))


if __name__ == "__main__":
    main()
