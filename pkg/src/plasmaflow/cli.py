"""Command-line entry points: run a store daemon, drive the benchmarks.

    plasmaflow daemon --config node0.conf
    plasmaflow bench --producer /tmp/a.sock --consumer-local /tmp/a.sock \
        --consumer-remote /tmp/b.sock --bench all --reps 100 \
        --format csv --out records.csv
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench as bench_mod
from .bench import BenchmarkSpec, Phase, Scenario, emit, run_benchmark, summarize
from .client import connect
from .config import load_config
from .daemon import StoreDaemon
from .errors import PlasmaFlowError

log = logging.getLogger(__name__)


def _parse_bench_selection(raw: str) -> list[int]:
    if raw == "all":
        return sorted(bench_mod.BENCH_MATRIX)
    try:
        selected = sorted({int(part) for part in raw.split(",")})
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--bench expects 'all' or comma-separated ids 1..6, got {raw!r}"
        ) from None
    for bench_id in selected:
        if bench_id not in bench_mod.BENCH_MATRIX:
            raise argparse.ArgumentTypeError(f"unknown bench id {bench_id}")
    return selected


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plasmaflow",
        description="Memory-disaggregated immutable object store",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    daemon_p = sub.add_parser("daemon", help="run a store daemon until signaled")
    daemon_p.add_argument("--config", required=True, help="flat key=value config file")

    bench_p = sub.add_parser("bench", help="run the benchmark matrix")
    bench_p.add_argument("--producer", required=True,
                         help="client socket of the store objects are committed to")
    bench_p.add_argument("--consumer-local", required=True,
                         help="client socket for the local-consumption scenario")
    bench_p.add_argument("--consumer-remote", required=True,
                         help="client socket of the other store for the remote scenario")
    bench_p.add_argument("--bench", default="all", type=_parse_bench_selection,
                         help="'all' or comma-separated bench ids (default: all)")
    bench_p.add_argument("--reps", type=int, default=bench_mod.DEFAULT_REPETITIONS,
                         help="repetitions per bench and scenario (default: 100)")
    bench_p.add_argument("--seed", type=int, default=0, help="payload PRNG seed")
    bench_p.add_argument("--format", choices=("csv", "json"), default="csv")
    bench_p.add_argument("--out", required=True, help="records output path")
    return parser


def _cmd_daemon(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
    except PlasmaFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=getattr(logging, config.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        daemon = StoreDaemon(config)
    except PlasmaFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    daemon.run_forever()
    return 0


def _format_summary(stats) -> str:
    lines = [
        f"{'bench':>5} {'scenario':>8} {'phase':>17} {'p50':>14} "
        f"{'mean':>14} {'p95':>14} {'unit':>16}"
    ]
    for (bench_id, scenario, phase), s in stats.items():
        unit = "ns" if phase is not Phase.READ else "B/s"
        lines.append(
            f"{bench_id:>5} {scenario.value:>8} {phase.value:>17} "
            f"{s.p50:>14.0f} {s.mean:>14.0f} {s.p95:>14.0f} {unit:>16}"
        )
    return "\n".join(lines)


def _cmd_bench(args: argparse.Namespace) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        producer = connect(args.producer)
        consumer_local = connect(args.consumer_local)
        consumer_remote = connect(args.consumer_remote)
    except PlasmaFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    records = []
    failures = 0
    try:
        for bench_id in args.bench:
            for scenario, consumer in (
                (Scenario.LOCAL, consumer_local),
                (Scenario.REMOTE, consumer_remote),
            ):
                spec = BenchmarkSpec(
                    bench_id=bench_id,
                    scenario=scenario,
                    repetitions=args.reps,
                    seed=args.seed,
                )
                log.info("running bench %d (%d x %d bytes), scenario %s, %d reps",
                         bench_id, spec.num_objects, spec.object_size,
                         scenario.value, args.reps)
                try:
                    report = run_benchmark(spec, producer, consumer)
                except PlasmaFlowError as exc:
                    print(f"error: bench {bench_id} {scenario.value}: {exc}",
                          file=sys.stderr)
                    failures += 1
                    continue
                records.extend(report.records)
                if report.aborted:
                    failures += len(report.aborted)
                    for repetition, reason in report.aborted:
                        print(f"aborted: bench {bench_id} {scenario.value} "
                              f"rep {repetition}: {reason}", file=sys.stderr)
                if report.audit_violations:
                    failures += report.audit_violations
                    print(f"AUDIT: {report.audit_violations} checksum violations in "
                          f"bench {bench_id} {scenario.value}", file=sys.stderr)
    finally:
        producer.close()
        consumer_local.close()
        consumer_remote.close()
    if records:
        emit(records, args.format, args.out)
        print(_format_summary(summarize(records)))
        print(f"\n{len(records)} records written to {args.out}")
    if failures:
        print(f"error: {failures} failures", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "daemon":
        return _cmd_daemon(args)
    if args.command == "bench":
        return _cmd_bench(args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
