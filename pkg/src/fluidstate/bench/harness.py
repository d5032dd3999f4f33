"""Open-loop benchmark driver.

Each worker generates its share of one global record stream. Record ``i``
is due at ``i * 1e9 / rate`` nanoseconds after the start, whatever the
system is doing; a worker sends every record that is due when it gets to
run, stamped with the due time of the earliest of them, and then advances
its input to the due time of the next one. The latency of a batch stamped
``h`` is the time at which the probe on the output passes ``h``, minus
``h``.

Time comes either from the wall clock (one thread per worker) or from a
virtual clock that advances by a modelled cost per scheduling round, in
which case a run is fully reproducible.
"""

from __future__ import annotations

import gc
import logging
import sys
import threading
import time as _time
from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..dataflow import ConfigurationError, DataflowGraph, InputHandle, LivenessError, Probe, build_dataflow
from ..planner import (
    STRATEGIES,
    MigrationReport,
    PlanDriver,
    balanced_configuration,
    make_plan,
    skewed_configuration,
)
from ..routing import check_bins
from ..stateful import MigrationMetrics, stateful_unary
from .histogram import LatencyHistogram
from .workloads import WORKLOADS, generate_keys, generate_record, make_workload, native_count

log = logging.getLogger(__name__)

NS = 1_000_000_000
WINDOW_NS = 250_000_000
_VECTOR_MIN = 64


@dataclass
class BenchConfig:
    workload: str = "keycount"
    workers: int = 4
    rate: int = 100_000
    domain: int = 1_000_000
    bins: int = 1024
    strategy: str = "fluid"
    batch_size: int = 64
    migrate_at: Optional[float] = 10.0
    remigrate_at: Optional[float] = None
    duration: float = 20.0
    gap: int = 0
    grouped: bool = False
    seed: int = 0
    deterministic: bool = False
    batch: int = 1024
    native: bool = False
    preload: bool = True
    warmup: float = 1.0
    max_emit: int = 1 << 16
    # (worker, at seconds, stall seconds)
    stall: Optional[Tuple[int, float, float]] = None
    # closed-loop cap on unacknowledged records per worker, for saturation runs
    outstanding: Optional[int] = None
    # virtual clock cost model, in nanoseconds
    step_ns: int = 20_000
    record_ns: int = 1_000
    byte_ns: int = 1
    switch_interval: float = 0.0005
    idle_sleep: float = 0.0001
    turns: bool = True
    drain_timeout: float = 30.0

    def validate(self) -> None:
        if self.workload not in WORKLOADS:
            raise ConfigurationError(f"workload must be one of {WORKLOADS}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}")
        check_bins(self.bins)
        if self.workers < 1:
            raise ConfigurationError("workers must be positive")
        if self.rate < 1:
            raise ConfigurationError("rate must be positive")
        if self.domain < 1:
            raise ConfigurationError("domain must be positive")
        if self.batch_size < 1 or self.batch < 1:
            raise ConfigurationError("batch sizes must be positive")
        if self.duration <= 0:
            raise ConfigurationError("duration must be positive")
        if self.gap < 0:
            raise ConfigurationError("gap must be non-negative")
        for at in (self.migrate_at, self.remigrate_at):
            if at is not None and not 0 <= at <= self.duration:
                raise ConfigurationError("migration times must lie within the run")
        if self.remigrate_at is not None and (self.migrate_at is None or self.remigrate_at < self.migrate_at):
            raise ConfigurationError("--remigrate-at needs an earlier --migrate-at")
        if self.native and (self.migrate_at is not None or self.remigrate_at is not None):
            raise ConfigurationError("the native baseline cannot migrate")


class OpenLoopSource:
    """One worker's share of the global open-loop schedule.

    Global record ``i`` belongs to worker ``i mod workers`` and is due at
    ``i * 1e9 // rate`` ns.
    """

    def __init__(self, rate: int, workers: int, worker: int, seed: int, domain: int):
        self.rate = rate
        self.workers = workers
        self.worker = worker
        self.seed = seed
        self.domain = domain
        self.next_k = 0

    def due_time(self, i: int) -> int:
        return i * NS // self.rate

    def next_time(self) -> int:
        return self.due_time(self.next_k * self.workers + self.worker)

    def due_count(self, now: int) -> int:
        """How many of this worker's records are due at ``now`` (inclusive)."""
        total = ((now + 1) * self.rate + NS - 1) // NS
        if total <= self.worker:
            return 0
        return (total - self.worker + self.workers - 1) // self.workers

    def take(self, now: int, limit: Optional[int] = None) -> Optional[Tuple[int, List[int]]]:
        """Keys of the records due by ``now`` (at most ``limit``), stamped with the first due time."""
        end = self.due_count(now)
        if limit is not None:
            end = min(end, self.next_k + limit)
        if end <= self.next_k:
            return None
        start = self.next_k
        stamp = self.due_time(start * self.workers + self.worker)
        self.next_k = end
        if end - start < _VECTOR_MIN:
            # numpy call overhead dominates for a handful of keys
            return stamp, [
                generate_record(self.seed, k * self.workers + self.worker, self.domain)[0] for k in range(start, end)
            ]
        idx = np.arange(start, end, dtype=np.uint64) * np.uint64(self.workers) + np.uint64(self.worker)
        return stamp, generate_keys(self.seed, idx, self.domain).tolist()


@dataclass
class MigrationSummary:
    strategy: str
    steps: int
    duration_ns: int
    max_latency_ns: int
    peak_inflight_bytes: int
    first_issue_ns: int = 0
    last_completion_ns: int = 0


@dataclass
class BenchResult:
    config: BenchConfig
    histogram: LatencyHistogram
    steady: LatencyHistogram
    timeline: List[Tuple[float, int, int, int]]
    migrations: List[MigrationSummary]
    records: int
    elapsed_ns: int
    reports: List[MigrationReport] = field(default_factory=list)
    batch_times: Optional[np.ndarray] = None
    batch_latencies: Optional[np.ndarray] = None

    @property
    def throughput(self) -> float:
        return self.records * NS / self.elapsed_ns if self.elapsed_ns else 0.0


class _WorkerLoad:
    def __init__(self, source: OpenLoopSource, data: InputHandle, control: InputHandle, probe: Probe):
        self.source = source
        self.data = data
        self.control = control
        self.probe = probe
        self.pending: Deque[Tuple[int, int]] = deque()
        self.outstanding = 0
        self.stamps = array("q")
        self.latencies = array("q")
        self.counts = array("q")
        self.observed = array("q")
        self.stalled = False


class BenchRun:
    """One configured run; call :meth:`run` once."""

    def __init__(self, config: BenchConfig):
        config.validate()
        self.config = config
        self.workload = make_workload(config.workload, config.domain, config.bins, config.preload)
        graph = DataflowGraph(config.workers, config.batch)
        control_in, control = graph.new_input("control")
        data_in, data = graph.new_input("data")
        self.metrics = MigrationMetrics()
        if config.native:
            out = native_count(data, self.workload, config.preload)
        else:
            wl = self.workload
            out = stateful_unary(
                control, data, wl.exchange, wl.fold, bins=config.bins, name=wl.name,
                state_factory=wl.state_factory, to_entries=wl.to_entries,
                from_entries=wl.from_entries, metrics=self.metrics,
            )
        probe = out.probe()
        self.cluster = build_dataflow(graph)
        self.loads = [
            _WorkerLoad(
                OpenLoopSource(config.rate, config.workers, w, config.seed, config.domain),
                rt.input(data_in), rt.input(control_in), rt.probe(probe),
            )
            for w, rt in enumerate(self.cluster)
        ]
        # worker 0 is the only controller; idle control inputs elsewhere would
        # hold every router back until all workers had ticked
        for load in self.loads[1:]:
            load.control.close()
            load.control = None
        balanced = balanced_configuration(config.bins, config.workers)
        skewed = skewed_configuration(config.bins, config.workers)
        self.schedule: List[Tuple[int, list, list]] = []
        if config.migrate_at is not None:
            self.schedule.append((int(config.migrate_at * NS), balanced, skewed))
        if config.remigrate_at is not None:
            self.schedule.append((int(config.remigrate_at * NS), skewed, balanced))
        self.driver: Optional[PlanDriver] = None
        self.reports: List[Tuple[MigrationReport, int]] = []
        self.duration_ns = int(config.duration * NS)
        self.finished = False
        self._lock = threading.Lock()

    # --- per-worker hook --------------------------------------------------

    def _hook(self, w: int, now: int) -> int:
        """Work done on worker ``w``'s context before it steps; returns extra stall ns."""
        cfg = self.config
        load = self.loads[w]
        pending = load.pending
        if pending:
            # observe against the freshest frontier this worker can know
            self.cluster.runtimes[w].absorb_progress()
            probe = load.probe
            while pending and probe.passed(pending[0][0]):
                stamp, count = pending.popleft()
                load.stamps.append(stamp)
                load.latencies.append(now - stamp)
                load.counts.append(count)
                load.observed.append(now)
                load.outstanding -= count

        stalled = 0
        if cfg.stall is not None and not load.stalled:
            worker, at, seconds = cfg.stall
            if worker == w and now >= int(at * NS):
                load.stalled = True
                stalled = int(seconds * NS)
                if not cfg.deterministic:
                    _time.sleep(seconds)

        if w == 0:
            self._drive(now)

        if self._more_due(load, now):
            limit = cfg.max_emit
            if cfg.outstanding is not None:
                limit = min(limit, max(cfg.outstanding - load.outstanding, 0))
            taken = load.source.take(min(now, self.duration_ns - 1), limit) if limit else None
            if taken is not None:
                stamp, keys = taken
                stamp = max(stamp, load.data.time)
                load.data.advance_to(stamp)
                load.data.send(self.workload.make_records(keys))
                pending.append((stamp, len(keys)))
                load.outstanding += len(keys)
                nxt = load.source.next_time()
                if cfg.outstanding is not None:
                    # closed loop: time moves on with the clock, not the schedule
                    nxt = max(nxt, now + 1)
                load.data.advance_to(nxt)
                if load.control is not None and load.control.time < nxt:
                    load.control.advance_to(nxt)
            elif load.control is not None and load.control.time < now:
                load.control.advance_to(now)
        else:
            # no more records, but time keeps moving so late migration steps can complete
            load.data.advance_to(max(load.data.time, now))
            if load.control is not None:
                load.control.advance_to(max(load.control.time, now))
        return stalled

    def _more_due(self, load: _WorkerLoad, now: int) -> bool:
        if self.config.outstanding is not None:
            # closed loop: the schedule is unbounded, the clock decides
            return now < self.duration_ns
        return load.source.next_time() < self.duration_ns

    def _drive(self, now: int) -> None:
        cfg = self.config
        if self.driver is None:
            if self.schedule and now >= self.schedule[0][0]:
                _, c1, c2 = self.schedule.pop(0)
                plan = make_plan(cfg.strategy, c1, c2, batch_size=cfg.batch_size, gap=cfg.gap, grouped=cfg.grouped)
                self.metrics.reset_peak()
                self.driver = PlanDriver(plan, self.loads[0].control, self.loads[0].probe)
            else:
                self._check_finished(now)
                return
        if self.driver.poll(now):
            self.reports.append((self.driver.report, self.metrics.peak_in_flight_bytes))
            self.driver = None
        self._check_finished(now)

    def _check_finished(self, now: int) -> None:
        if self.driver is not None or self.schedule or now < self.duration_ns:
            return
        # every record due before the end must have been taken and observed
        if all(not load.pending and not self._more_due(load, now) for load in self.loads):
            self.finished = True

    # --- schedulers -------------------------------------------------------

    def run(self) -> BenchResult:
        if self.config.deterministic:
            elapsed = self._run_virtual()
        else:
            # objects that existed before the run (the caller's heap included)
            # stay out of full collections, which would otherwise pause
            # workers for time proportional to the host process size
            gc.collect()
            gc.freeze()
            try:
                elapsed = self._run_threaded()
            finally:
                gc.unfreeze()
        return self._result(elapsed)

    def _run_virtual(self) -> int:
        cfg = self.config
        now = 0
        limit = self.duration_ns + int(cfg.drain_timeout * NS)
        runtimes = self.cluster.runtimes
        while not self.finished:
            if now > limit:
                raise LivenessError(f"run did not finish within {cfg.drain_timeout}s of virtual time after the end")
            cost = 0
            busy = False
            for w, rt in enumerate(runtimes):
                before = self.loads[w].source.next_k
                extra = self._hook(w, now)
                records, nbytes = rt.work_records, rt.work_bytes
                busy = rt.step() or busy or self.loads[w].source.next_k != before
                c = cfg.step_ns + cfg.record_ns * (rt.work_records - records) + cfg.byte_ns * (rt.work_bytes - nbytes) + extra
                cost = max(cost, c)
            now += cost
            if not busy:
                # nothing moved: skip to the next scheduled event
                now = max(now, self._next_event(now))
        return now

    def _next_event(self, now: int) -> int:
        events = [self.duration_ns]
        if self.schedule:
            events.append(self.schedule[0][0])
        for load in self.loads:
            events.append(load.source.next_time())
        upcoming = [e for e in events if e > now]
        return min(upcoming) if upcoming else now

    def _run_threaded(self) -> int:
        cfg = self.config
        start = _time.monotonic_ns()
        old_interval = sys.getswitchinterval()
        sys.setswitchinterval(cfg.switch_interval)
        try:
            self.cluster.run_until(
                lambda: self.finished,
                threaded=True,
                max_steps=10**12,
                timeout=cfg.duration + cfg.drain_timeout,
                before_step=lambda w: self._hook(w, _time.monotonic_ns() - start),
                idle_sleep=cfg.idle_sleep,
                turns=cfg.turns,
            )
        finally:
            sys.setswitchinterval(old_interval)
        return _time.monotonic_ns() - start

    # --- results ----------------------------------------------------------

    def _result(self, elapsed: int) -> BenchResult:
        cfg = self.config
        stamps = np.concatenate([np.frombuffer(l.stamps, dtype=np.int64) for l in self.loads]) if self.loads else np.zeros(0, np.int64)
        lats = np.concatenate([np.frombuffer(l.latencies, dtype=np.int64) for l in self.loads])
        counts = np.concatenate([np.frombuffer(l.counts, dtype=np.int64) for l in self.loads])
        observed = np.concatenate([np.frombuffer(l.observed, dtype=np.int64) for l in self.loads])

        hist = LatencyHistogram()
        steady = LatencyHistogram()
        steady_lo = int(cfg.warmup * NS)
        steady_hi = self.duration_ns if not self.schedule_times() else self.schedule_times()[0]
        windows: Dict[int, LatencyHistogram] = {}
        order = np.lexsort((lats, stamps))
        for i in order.tolist():
            lat, c, st = int(lats[i]), int(counts[i]), int(stamps[i])
            hist.record(lat, c)
            if steady_lo <= st < steady_hi:
                steady.record(lat, c)
            win = int(observed[i]) // WINDOW_NS
            h = windows.get(win)
            if h is None:
                h = windows[win] = LatencyHistogram()
            h.record(lat, c)
        timeline = [
            ((win + 1) * WINDOW_NS / NS, h.max_value, h.quantile(0.99), h.quantile(0.5))
            for win, h in sorted(windows.items())
        ]

        summaries = []
        for report, peak in self.reports:
            lo, hi = report.first_issue_ns, report.last_completion_ns
            if lo is None:
                summaries.append(MigrationSummary(report.strategy, 0, 0, 0, peak))
                continue
            mask = (stamps >= lo) & (stamps <= hi)
            worst = int(lats[mask].max()) if mask.any() else 0
            summaries.append(
                MigrationSummary(report.strategy, len(report.steps), report.duration_ns, worst, peak, lo, hi)
            )
        return BenchResult(
            cfg, hist, steady, timeline, summaries, int(counts.sum()), elapsed,
            [r for r, _ in self.reports], stamps, lats,
        )

    def schedule_times(self) -> List[int]:
        cfg = self.config
        return [int(at * NS) for at in (cfg.migrate_at, cfg.remigrate_at) if at is not None]


def run_benchmark(config: BenchConfig) -> BenchResult:
    return BenchRun(config).run()


def measure_saturation(config: BenchConfig, seconds: float = 2.0, outstanding: Optional[int] = None) -> float:
    """Records per second the configuration sustains with a bounded number of records in flight."""
    window = outstanding or config.batch
    cfg = BenchConfig(**{
        **config.__dict__,
        "rate": 10**9,
        "duration": seconds,
        "migrate_at": None,
        "remigrate_at": None,
        "warmup": 0.0,
        "outstanding": window,
        "max_emit": window,
    })
    result = run_benchmark(cfg)
    return result.throughput


def measure_latency(config: BenchConfig) -> List[Tuple[float, int, int, int]]:
    """Timeline samples (elapsed_s, max_ns, p99_ns, p50_ns) of one run."""
    return run_benchmark(config).timeline
