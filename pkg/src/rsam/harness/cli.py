"""Harness command line: scenarios, bench, crash."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .bench import format_table, parse_sizes, run_bench, write_csv
from .control import HarnessStack
from .crash import AFTER_FORWARD_BEFORE_RESPONSE, crash_injection
from .scenarios import EXPECTED_TERMINALS, SCENARIOS, run_all


def cmd_scenarios(args: argparse.Namespace) -> int:
    started = time.monotonic()
    reports = run_all(only=args.only)
    elapsed = time.monotonic() - started
    failures = 0
    for report in reports:
        status = "ok" if report.ok else "FAILED"
        print(
            f"[{status:>6}] {report.name:<24} ({' / '.join(report.states)})"
            f" terminal={report.terminal or '-'} checks={len(report.assertions)}"
        )
        for assertion in report.assertions:
            if not assertion.ok or args.verbose:
                mark = "+" if assertion.ok else "x"
                print(f"    {mark} {assertion.desc} {assertion.detail}")
        failures += 0 if report.ok else 1
    if not args.only:
        terminals = [r.terminal for r in reports]
        print(f"terminal states: {terminals}")
        if terminals != EXPECTED_TERMINALS:
            print(f"expected:        {EXPECTED_TERMINALS}")
            failures += 1
    print(f"{len(reports)} scenario(s) in {elapsed:.1f}s, {failures} failure(s)")
    return 1 if failures else 0


def cmd_bench(args: argparse.Namespace) -> int:
    sizes = parse_sizes(args.sizes)
    with HarnessStack() as stack:
        rows, summaries = run_bench(stack, sizes, args.latency_ms, reps=args.reps)
    if args.out:
        write_csv(rows, args.out)
        print(f"wrote {len(rows)} measurements to {args.out}")
    print(format_table(summaries))
    return 0


def cmd_crash(args: argparse.Namespace) -> int:
    point = {"after-forward": AFTER_FORWARD_BEFORE_RESPONSE}.get(args.point, args.point)
    report = crash_injection(point)
    print(f"crash point: {report.point}")
    print(f"  control (no injection):        {report.control_outcome}")
    print(
        f"  POST replay after crash:       {report.post_replay_outcome}"
        f" (upstream invocations: {report.post_invocations})"
    )
    print(
        f"  GET replay after crash:        {report.get_replay_outcome}"
        f" (upstream invocations: {report.get_invocations})"
    )
    print("ok" if report.ok else "FAILED")
    return 0 if report.ok else 1


def main(argv: list[str] | None = None) -> None:
    logging.basicConfig(level=logging.WARNING)
    parser = argparse.ArgumentParser(prog="rsam-harness", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_scenarios = sub.add_parser("scenarios", help="run the reachability scenarios")
    p_scenarios.add_argument("--only", choices=sorted(SCENARIOS), default=None)
    p_scenarios.add_argument("--verbose", action="store_true")
    p_scenarios.set_defaults(func=cmd_scenarios)

    p_bench = sub.add_parser("bench", help="measure overhead factors vs the direct path")
    p_bench.add_argument("--sizes", default="1k,64k,1m,4m")
    p_bench.add_argument("--latency-ms", type=int, default=200)
    p_bench.add_argument("--reps", type=int, default=5)
    p_bench.add_argument("--out", default=None, help="CSV output path")
    p_bench.set_defaults(func=cmd_bench)

    p_crash = sub.add_parser("crash", help="kill the gateway inside the doubt window")
    p_crash.add_argument("--point", default="after-forward")
    p_crash.set_defaults(func=cmd_crash)

    args = parser.parse_args(argv)
    sys.exit(args.func(args))


if __name__ == "__main__":
    main()
