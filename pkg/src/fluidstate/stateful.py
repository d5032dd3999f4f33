"""Migratable stateful operators.

A stateful operator is split into two halves per input. The router (one per
worker and input) hashes each record to a bin, looks up the bin's owner for
the record's time and ships the record there. The state host (one per
worker) keeps the bins it owns and applies records to them once their time
is complete.

Reconfigurations arrive on a control stream, broadcast to every router.
Instructions for time ``t`` take effect at ``t``: records at earlier times go
to the old owner, records at ``t`` and later go to the new one. A router
holds back records whose time the control frontier has not yet passed,
because an instruction for that time may still be on its way. When the
state host output has caught up with ``t``, the old owner's router pulls the
bin out of the shared store and sends it, with any post-dated records, to
the new owner.

Record order within one (time, bin) is fixed: post-dated records first, in
the order they were scheduled, then input records grouped by sending worker
in arrival order. Under the deterministic scheduler this makes every run
with the same inputs reproducible.
"""

from __future__ import annotations

import heapq
import itertools
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from operator import itemgetter
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .bins import Bin, BinSnapshot, BinStore, Notificator
from .dataflow import Broadcast, ConfigurationError, Exchange, OperatorContext, Pipeline, Stream
from .progress import Antichain, Timestamp
from .routing import MASK64, ControlInstruction, ProtocolError, RoutingTable, check_bins

DEFAULT_BINS = 4096

_ids = itertools.count()


class MigrationMetrics:
    """Counters shared by every worker of one stateful operator.

    Snapshot bytes are counted in flight from the moment the old owner
    encodes a bin until the new owner installs it.
    """

    def __init__(self, record_events: bool = False, record_applications: bool = False):
        self._lock = threading.Lock()
        self.in_flight_bytes = 0
        self.peak_in_flight_bytes = 0
        self.bytes_sent: Dict[int, int] = defaultdict(int)
        self.bytes_received: Dict[int, int] = defaultdict(int)
        self.bins_moved = 0
        self.in_flight_bins: Dict[int, Tuple[int, int]] = {}
        self.events: Optional[list] = [] if record_events else None
        self.applications: Optional[list] = [] if record_applications else None

    def reset_peak(self) -> None:
        with self._lock:
            self.peak_in_flight_bytes = self.in_flight_bytes

    def _sent(self, worker: int, b: int, dest: int, size: int) -> None:
        with self._lock:
            self.in_flight_bytes += size
            if self.in_flight_bytes > self.peak_in_flight_bytes:
                self.peak_in_flight_bytes = self.in_flight_bytes
            self.bytes_sent[worker] += size
            self.in_flight_bins[b] = (worker, dest)

    def _installed(self, worker: int, b: int, size: int) -> None:
        with self._lock:
            self.in_flight_bytes -= size
            self.bytes_received[worker] += size
            self.bins_moved += 1
            self.in_flight_bins.pop(b, None)

    def _event(self, *event) -> None:
        if self.events is not None:
            with self._lock:
                self.events.append(event)


@dataclass(frozen=True)
class StatefulStream(Stream):
    """Output of a stateful operator, with a handle on its bins and metrics."""

    key: str = ""
    bins: int = 0
    metrics: Optional[MigrationMetrics] = None


@dataclass
class _Setup:
    key: str
    bins: int
    exchanges: List[Callable[[Any], int]]
    fold: Callable
    initial: Optional[Sequence[int]]
    state_factory: Callable[[int], Any]
    to_entries: Optional[Callable]
    from_entries: Optional[Callable]
    metrics: MigrationMetrics
    probe_op: int = -1

    def shared(self, ctx: OperatorContext) -> "_Shared":
        found = ctx.shared.get(self.key)
        if found is None:
            found = ctx.shared[self.key] = _Shared(self, ctx.worker, ctx.peers)
        return found


class _Shared:
    """Per-worker state reachable from both the routers and the host."""

    def __init__(self, setup: _Setup, worker: int, peers: int):
        initial = setup.initial
        if initial is None:
            initial = [b % peers for b in range(setup.bins)]
        elif len(initial) != setup.bins or any(not 0 <= w < peers for w in initial):
            raise ConfigurationError("initial placement must name a valid worker for every bin")
        self.initial = list(initial)
        self.store = BinStore()
        for b, owner in enumerate(self.initial):
            if owner == worker:
                self.store.install(Bin(b, setup.state_factory(b)))


class _Router:
    def __init__(self, ctx: OperatorContext, setup: _Setup, index: int):
        self.ctx = ctx
        self.worker = ctx.worker
        self.setup = setup
        self.shared = setup.shared(ctx)
        self.metrics = setup.metrics
        self.exchange = setup.exchanges[index]
        self.migrator = index == 0
        self.table = RoutingTable(setup.bins, ctx.peers, self.shared.initial)
        self.shift = 64 - check_bins(setup.bins)
        self.data_in, self.control_in = ctx.inputs
        self.data_out = ctx.outputs[0]
        self.state_out = ctx.outputs[1] if self.migrator else None
        self.hold_port = 1 if self.migrator else 0
        self.buffer: Dict[Timestamp, list] = {}
        self.buffer_caps: Dict[Timestamp, Any] = {}
        self.control_caps: Dict[Timestamp, Any] = {}
        self.migrations: List[Tuple[Timestamp, List[Tuple[int, int]], Any]] = []
        self.probe_loc = None
        if self.migrator:
            self.probe_loc = ctx.runtime.locations.input_loc[(setup.probe_op, 0)]
            ctx.watch(self.probe_loc)

    def __call__(self) -> None:
        ctx = self.ctx
        table = self.table
        metrics = self.metrics
        control_frontier = self.control_in.frontier

        for time, instrs, _ in self.control_in.drain():
            for instr in instrs:
                if not isinstance(instr, ControlInstruction):
                    raise ProtocolError(f"control stream carried {instr!r}")
                if not time <= instr.time:
                    raise ProtocolError(f"instruction for {instr.time!r} sent at later time {time!r}")
                table.control_apply(instr, control_frontier)
                if instr.time not in self.control_caps:
                    self.control_caps[instr.time] = ctx.capability(self.hold_port, instr.time)
                metrics._event("control", self.worker, instr.time, instr.moves)

        if table.pending:
            for t, moves in table.seal(control_frontier):
                cap = self.control_caps.pop(t)
                metrics._event("seal", self.worker, t, tuple(moves))
                mine = [(b, new) for b, old, new in moves if old == self.worker] if self.migrator else []
                if mine:
                    self.migrations.append((t, mine, cap))
                else:
                    cap.drop()

        if self.buffer:
            for t in sorted(self.buffer):
                if not control_frontier.less_equal(t):
                    records = self.buffer.pop(t)
                    self._route(t, records, released=True)
                    self.buffer_caps.pop(t).drop()

        for time, data, _ in self.data_in.drain():
            if control_frontier.less_equal(time):
                buf = self.buffer.get(time)
                if buf is None:
                    buf = self.buffer[time] = []
                    self.buffer_caps[time] = ctx.capability(0, time)
                buf.extend(data)
                if metrics.events is not None:
                    for record in data:
                        metrics._event("buffer", self.worker, time, record)
            else:
                self._route(time, data)

        if self.migrations:
            self._migrate()

        if table._history:
            bound = [e for e in self.data_in.frontier.elements]
            bound.extend(self.buffer)
            if bound:
                table.retire(min(bound))

    def _route(self, time: Timestamp, records: list, released: bool = False) -> None:
        exchange = self.exchange
        shift = self.shift
        table = self.table
        if table._history:
            lookup = table.lookup
            routed = []
            for record in records:
                b = (exchange(record) & MASK64) >> shift
                routed.append((lookup(time, b), b, record))
        else:
            current = table.current
            routed = []
            for record in records:
                b = (exchange(record) & MASK64) >> shift
                routed.append((current[b], b, record))
        metrics = self.metrics
        if metrics.events is not None:
            kind = "release" if released else "route"
            for dest, b, record in routed:
                metrics._event(kind, self.worker, time, dest, record)
        self.data_out.give(time, routed)

    def _migrate(self) -> None:
        frontier = self.ctx.frontier_at(self.probe_loc)
        store = self.shared.store
        while self.migrations:
            t, mine, cap = self.migrations[0]
            if not all(t <= e for e in frontier.elements):
                break
            self.migrations.pop(0)
            for b, dest in mine:
                payload = store.extract(b).snapshot(t, self.setup.to_entries).encode()
                self.metrics._sent(self.worker, b, dest, len(payload))
                self.metrics._event("migrate", self.worker, t, b, dest)
                self.state_out.give(t, [(dest, b, payload)])
            cap.drop()


class _Host:
    def __init__(self, ctx: OperatorContext, setup: _Setup, n_inputs: int):
        self.ctx = ctx
        self.worker = ctx.worker
        self.setup = setup
        self.store = setup.shared(ctx).store
        self.metrics = setup.metrics
        self.fold = setup.fold
        self.n = n_inputs
        self.data_ins = ctx.inputs[:n_inputs]
        self.state_in = ctx.inputs[n_inputs]
        self.out = ctx.outputs[0]
        self.staged: Dict[Timestamp, list] = {}
        self.wake: List[Tuple[Timestamp, int]] = []
        self.cap = None

    def __call__(self) -> None:
        ctx = self.ctx
        metrics = self.metrics
        for _, payloads, _ in self.state_in.drain():
            for dest, b, payload in payloads:
                if dest != self.worker:
                    raise ProtocolError(f"bin {b} for worker {dest} delivered to {self.worker}")
                snap = BinSnapshot.decode(payload)
                self.store.install(Bin.from_snapshot(snap, self.setup.from_entries))
                metrics._installed(self.worker, b, len(payload))
                metrics._event("install", self.worker, snap.time, b)
                first = self.store[b].notificator.peek_time()
                if first is not None:
                    heapq.heappush(self.wake, (first, b))

        for port, inp in enumerate(self.data_ins):
            for time, data, sender in inp.drain():
                entry = self.staged.get(time)
                if entry is None:
                    entry = self.staged[time] = []
                entry.append((sender, port, data))

        if self.staged or self.wake:
            frontier = Antichain()
            for inp in ctx.inputs:
                for e in inp.frontier.elements:
                    frontier.insert(e)
            while True:
                self._clean_wake()
                t = None
                for s in self.staged:
                    if not frontier.less_equal(s) and (t is None or s < t):
                        t = s
                if self.wake and not frontier.less_equal(self.wake[0][0]):
                    w = self.wake[0][0]
                    if t is None or w < t:
                        t = w
                if t is None:
                    break
                self._apply_time(t)
            self._clean_wake()
        self._hold()

    def _hold(self) -> None:
        """Keep one capability at the earliest time with staged or post-dated work."""
        low = min(self.staged) if self.staged else None
        if self.wake and (low is None or self.wake[0][0] < low):
            low = self.wake[0][0]
        cap = self.cap
        if low is None:
            if cap is not None:
                cap.drop()
                self.cap = None
        elif cap is None or low < cap.time:
            self.cap = self.ctx.capability(0, low)
            if cap is not None:
                cap.drop()
        elif cap.time != low:
            cap.downgrade(low)

    def _clean_wake(self) -> None:
        wake = self.wake
        store = self.store
        while wake:
            t, b = wake[0]
            found = store.get(b)
            if found is not None and found.notificator.peek_time() == t:
                return
            heapq.heappop(wake)

    def _apply_time(self, t: Timestamp) -> None:
        n = self.n
        groups: Dict[int, List[list]] = {}
        staged = self.staged.pop(t, None)
        if staged:
            staged.sort(key=itemgetter(0))
            for _, port, data in staged:
                for dest, b, record in data:
                    g = groups.get(b)
                    if g is None:
                        g = groups[b] = [[] for _ in range(n)]
                    g[port].append(record)
        woken = set()
        wake = self.wake
        store = self.store
        while wake and wake[0][0] == t:
            b = heapq.heappop(wake)[1]
            # entries go stale when their bin leaves or its reminder is consumed
            found = store.get(b)
            if found is not None and found.notificator.peek_time() == t:
                woken.add(b)
        metrics = self.metrics
        applications = metrics.applications
        fold = self.fold
        emitted: list = []
        for b in sorted(woken.union(groups)) if woken else sorted(groups):
            found = store.get(b)
            if found is None:
                raise ProtocolError(f"records for bin {b} at {t!r} reached worker {self.worker}, which does not host it")
            notificator = found.notificator
            if b in woken:
                # post-dated records come before this time's fresh ones
                inputs = [[] for _ in range(n)]
                for _, _, port, record in notificator.pop_at(t):
                    inputs[port].append(record)
                fresh = groups.get(b)
                if fresh is not None:
                    for port in range(n):
                        inputs[port].extend(fresh[port])
            else:
                inputs = groups[b]
            notificator._now = t
            try:
                outputs = fold(t, inputs, found.state, notificator)
            finally:
                notificator._now = None
            if outputs:
                outputs = list(outputs)
                emitted.extend(outputs)
            if applications is not None:
                applications.append((self.worker, t, b))
            if metrics.events is not None:
                metrics._event("apply", self.worker, t, b, tuple(tuple(p) for p in inputs), tuple(outputs or ()))
            if notificator._heap:
                heapq.heappush(wake, (notificator._heap[0][0], b))
        if emitted:
            self.out.give(t, emitted)


def _bin_owner(record) -> int:
    return record[0]


def _stateful(
    control: Stream,
    inputs: Sequence[Stream],
    exchanges: Sequence[Callable[[Any], int]],
    fold: Callable,
    *,
    bins: int = DEFAULT_BINS,
    name: str = "stateful",
    initial: Optional[Sequence[int]] = None,
    state_factory: Optional[Callable[[int], Any]] = None,
    to_entries: Optional[Callable] = None,
    from_entries: Optional[Callable] = None,
    metrics: Optional[MigrationMetrics] = None,
) -> StatefulStream:
    check_bins(bins)
    graph = control.graph
    if any(s.graph is not graph for s in inputs):
        raise ConfigurationError("all streams must belong to one dataflow")
    n = len(inputs)
    setup = _Setup(
        key=f"{name}#{next(_ids)}",
        bins=bins,
        exchanges=list(exchanges),
        fold=fold,
        initial=initial,
        state_factory=state_factory or (lambda b: {}),
        to_entries=to_entries,
        from_entries=from_entries,
        metrics=metrics or MigrationMetrics(),
    )
    routers = []
    for i, stream in enumerate(inputs):
        spec = graph.add_operator(
            f"{name}.route{i}", 2, 2 if i == 0 else 1, lambda ctx, i=i: _Router(ctx, setup, i)
        )
        stream.connect_to(spec.id, 0, Pipeline())
        control.connect_to(spec.id, 1, Broadcast())
        routers.append(spec.id)
    host = graph.add_operator(f"{name}.host", n + 1, 1, lambda ctx: _Host(ctx, setup, n))
    for i, op in enumerate(routers):
        Stream(graph, op, 0).connect_to(host.id, i, Exchange(_bin_owner))
    Stream(graph, routers[0], 1).connect_to(host.id, n, Exchange(_bin_owner))
    out = StatefulStream(graph, host.id, 0, key=setup.key, bins=bins, metrics=setup.metrics)
    setup.probe_op = Stream(graph, host.id, 0).probe().op
    return out


def stateful_unary(
    control: Stream,
    input: Stream,
    exchange: Callable[[Any], int],
    fold: Callable[[Timestamp, list, Any, Notificator], Any],
    **options,
) -> StatefulStream:
    """A migratable operator with one data input.

    ``exchange(record)`` gives a 64-bit hash whose top bits pick the bin.
    ``fold(time, records, state, notificator)`` runs once per (time, bin)
    with the bin's mutable state and returns output records. Calling
    ``notificator.notify_at(later, record)`` presents ``record`` again at
    ``later``, on whichever worker owns the bin by then.

    Options: ``bins`` (power of two, default 4096), ``name``, ``initial``
    (owner per bin), ``state_factory(bin)`` (default: empty dict),
    ``to_entries``/``from_entries`` (state serialization, default dict
    items) and ``metrics``.
    """

    def run(time, inputs, state, notificator):
        return fold(time, inputs[0], state, notificator)

    return _stateful(control, [input], [exchange], run, **options)


def stateful_binary(
    control: Stream,
    input1: Stream,
    input2: Stream,
    exchange1: Callable[[Any], int],
    exchange2: Callable[[Any], int],
    fold: Callable[[Timestamp, list, list, Any, Notificator], Any],
    **options,
) -> StatefulStream:
    """Two-input variant; both inputs share bins, state and notificator.

    Post-dated records come back on the port they were scheduled for
    (``notify_at(time, record, port)``).
    """

    def run(time, inputs, state, notificator):
        return fold(time, inputs[0], inputs[1], state, notificator)

    return _stateful(control, [input1, input2], [exchange1, exchange2], run, **options)


def state_machine(
    control: Stream,
    input: Stream,
    exchange: Callable[[Any], int],
    fold: Callable[[Any, Any, Any], Tuple[Any, list]],
    **options,
) -> StatefulStream:
    """Per-key state machine over ``(key, value)`` records.

    ``fold(key, value, state)`` gets the key's current state (``None`` if
    absent) and returns ``(new_state, outputs)``; a ``None`` new state
    removes the key.
    """

    def run(time, records, state, notificator):
        emitted = []
        for key, value in records:
            new, outputs = fold(key, value, state.get(key))
            if new is None:
                state.pop(key, None)
            else:
                state[key] = new
            emitted.extend(outputs)
        return emitted

    return stateful_unary(control, input, lambda kv: exchange(kv[0]), run, **options)


def hosted_bins(cluster, stream: StatefulStream) -> List[List[int]]:
    """Bins currently hosted by each worker."""
    out = []
    for rt in cluster:
        shared = rt.shared.get(stream.key)
        out.append(shared.store.ids() if shared is not None else [])
    return out


def bin_store(runtime, stream: StatefulStream) -> BinStore:
    return runtime.shared[stream.key].store
