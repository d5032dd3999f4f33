"""Command line entry point: run one benchmark and write its CSV files."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from typing import List, Optional

from ..dataflow import ConfigurationError, LivenessError
from ..planner import STRATEGIES
from .harness import BenchConfig, BenchResult, run_benchmark
from .histogram import emit_ccdf
from .workloads import WORKLOADS

log = logging.getLogger("fluidstate.bench")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fluidstate-bench",
        description="Open-loop latency benchmark for live state migration.",
    )
    p.add_argument("--workload", choices=WORKLOADS, default="keycount")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--rate", type=int, default=100_000, help="records per second, across all workers")
    p.add_argument("--domain", type=int, default=1_000_000, help="number of distinct keys")
    p.add_argument("--bins", type=int, default=4096, help="power of two")
    p.add_argument("--strategy", choices=STRATEGIES, default="fluid")
    p.add_argument("--batch-size", type=int, default=64, help="bins per step for --strategy batched")
    p.add_argument("--migrate-at", type=float, default=10.0, help="seconds; negative disables migration")
    p.add_argument("--remigrate-at", type=float, default=None, help="seconds; migrate back to the balanced layout")
    p.add_argument("--duration", type=float, default=20.0, help="seconds")
    p.add_argument("--gap", type=int, default=0, help="logical ticks (ns) between a step's issue time and its effect")
    p.add_argument("--grouped", action="store_true", help="pack moves with distinct sources and destinations into one step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", help="single thread with a virtual clock")
    p.add_argument("--output", default=".", help="directory for the CSV files")
    p.add_argument("--batch", type=int, default=1024, help="records per channel message")
    p.add_argument("--native", action="store_true", help="non-migratable baseline operator")
    p.add_argument("--no-preload", action="store_true", help="start with empty state")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> BenchConfig:
    migrate_at = args.migrate_at if args.migrate_at is not None and args.migrate_at >= 0 else None
    if args.native:
        migrate_at = None
    return BenchConfig(
        workload=args.workload,
        workers=args.workers,
        rate=args.rate,
        domain=args.domain,
        bins=args.bins,
        strategy=args.strategy,
        batch_size=args.batch_size,
        migrate_at=migrate_at,
        remigrate_at=args.remigrate_at,
        duration=args.duration,
        gap=args.gap,
        grouped=args.grouped,
        seed=args.seed,
        deterministic=args.deterministic,
        batch=args.batch,
        native=args.native,
        preload=not args.no_preload,
    )


def write_outputs(result: BenchResult, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "timeline.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["elapsed_s", "max_ns", "p99_ns", "p50_ns"])
        for elapsed, mx, p99, p50 in result.timeline:
            w.writerow([f"{elapsed:.2f}", mx, p99, p50])
    emit_ccdf(result.histogram, os.path.join(directory, "ccdf.csv"))
    with open(os.path.join(directory, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "steps", "duration_ns", "max_migration_latency_ns", "peak_inflight_bytes"])
        for m in result.migrations:
            w.writerow([m.strategy, m.steps, m.duration_ns, m.max_latency_ns, m.peak_inflight_bytes])


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = config_from_args(args)
        config.validate()
    except ConfigurationError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_benchmark(config)
    except LivenessError as exc:
        print(f"{parser.prog}: liveness failure: {exc}", file=sys.stderr)
        return 3
    write_outputs(result, args.output)
    log.info("records=%d throughput=%.0f/s", result.records, result.throughput)
    for m in result.migrations:
        log.info(
            "%s: %d steps, %.3f ms, max latency %.3f ms, peak in flight %d bytes",
            m.strategy, m.steps, m.duration_ns / 1e6, m.max_latency_ns / 1e6, m.peak_inflight_bytes,
        )
    return 0
