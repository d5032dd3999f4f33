"""A small timely-style dataflow runtime.

A :class:`DataflowGraph` is built once and instantiated on every worker by
:func:`build_dataflow`. Workers exchange data and progress updates only
through queues; payloads that cross a worker boundary are pickled on the
way out and unpickled on the way in, so the cost of moving data between
workers is paid even though everything runs in one process.

Two schedulers drive the workers: a deterministic one that steps workers
on the calling thread (round-robin or in a seeded random order) and a
threaded one with one thread per worker.
"""

from __future__ import annotations

import logging
import pickle
import random
import threading
import time as _time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .progress import (
    MINIMUM,
    Antichain,
    Capability,
    CapabilityError,
    ChangeBatch,
    ProgressTracker,
    Timestamp,
)

log = logging.getLogger(__name__)

DEFAULT_BATCH = 1024


class ConfigurationError(ValueError):
    """The dataflow graph or its parameters are invalid."""


class UsageError(RuntimeError):
    """An input handle or port was used against its contract."""


class LivenessError(RuntimeError):
    """The step budget ran out before the awaited condition held."""


# --- channel contracts ------------------------------------------------------


class Pipeline:
    """Records stay on the worker that produced them."""

    def __repr__(self) -> str:
        return "Pipeline()"


class Exchange:
    """Records go to worker ``fn(record) mod peers``."""

    def __init__(self, fn: Callable[[Any], int]):
        self.fn = fn

    def __repr__(self) -> str:
        return f"Exchange({getattr(self.fn, '__name__', self.fn)!r})"


class Broadcast:
    """Every record goes to every worker."""

    def __repr__(self) -> str:
        return "Broadcast()"


def exchange_route(fn: Callable[[Any], int], record: Any, worker_count: int) -> int:
    if worker_count < 1:
        raise ConfigurationError("worker_count must be positive")
    return fn(record) % worker_count


# --- graph description -----------------------------------------------------


@dataclass
class OperatorSpec:
    id: int
    name: str
    inputs: int
    outputs: int
    constructor: Callable[["OperatorContext"], Callable[[], None]]


@dataclass
class Edge:
    source: Tuple[int, int]
    target: Tuple[int, int]
    pact: Any


@dataclass(frozen=True)
class Stream:
    graph: "DataflowGraph"
    op: int
    port: int = 0

    def connect_to(self, op: int, port: int, pact: Any = None) -> None:
        self.graph.connect(self, op, port, pact or Pipeline())

    def unary(self, name: str, constructor, pact: Any = None, outputs: int = 1) -> "Stream":
        spec = self.graph.add_operator(name, 1, outputs, constructor)
        self.connect_to(spec.id, 0, pact)
        return Stream(self.graph, spec.id, 0)

    def probe(self) -> "ProbeSpec":
        spec = self.graph.add_operator("probe", 1, 0, _discard_inputs)
        self.connect_to(spec.id, 0)
        return ProbeSpec(spec.id)

    def capture(self) -> "CaptureSpec":
        spec = self.graph.add_operator("capture", 1, 0, _capture_inputs)
        self.connect_to(spec.id, 0)
        return CaptureSpec(spec.id)

    def inspect(self, fn: Callable[[int, Timestamp, Any], None]) -> "Stream":
        """Pass records through, calling ``fn(worker, time, record)`` for each."""

        def build(ctx):
            def logic():
                for time, data, _ in ctx.inputs[0].drain():
                    for record in data:
                        fn(ctx.worker, time, record)
                    ctx.outputs[0].give(time, data)

            return logic

        return self.unary("inspect", build)


@dataclass(frozen=True)
class InputSpec:
    op: int


@dataclass(frozen=True)
class ProbeSpec:
    op: int


@dataclass(frozen=True)
class CaptureSpec:
    op: int


def _discard_inputs(ctx: "OperatorContext"):
    def logic():
        for port in ctx.inputs:
            port.drain()

    return logic


def _capture_inputs(ctx: "OperatorContext"):
    store = ctx.runtime.captured.setdefault(ctx.op_id, [])

    def logic():
        for time, data, _ in ctx.inputs[0].drain():
            for record in data:
                store.append((time, record))

    return logic


class DataflowGraph:
    """Logical dataflow: operators, edges and the number of workers running it."""

    def __init__(self, workers: int, batch: int = DEFAULT_BATCH):
        if workers < 1:
            raise ConfigurationError("worker_count must be positive")
        if batch < 1:
            raise ConfigurationError("batch must be positive")
        self.workers = workers
        self.batch = batch
        self.operators: List[OperatorSpec] = []
        self.edges: List[Edge] = []
        self.inputs: List[int] = []

    def add_operator(self, name: str, inputs: int, outputs: int, constructor) -> OperatorSpec:
        spec = OperatorSpec(len(self.operators), name, inputs, outputs, constructor)
        self.operators.append(spec)
        return spec

    def connect(self, stream: Stream, op: int, port: int, pact: Any) -> Edge:
        edge = Edge((stream.op, stream.port), (op, port), pact)
        self.edges.append(edge)
        return edge

    def new_input(self, name: str = "input") -> Tuple[InputSpec, Stream]:
        spec = self.add_operator(name, 0, 1, _input_operator)
        self.inputs.append(spec.id)
        return InputSpec(spec.id), Stream(self, spec.id, 0)

    def validate(self) -> List[int]:
        """Check edges and acyclicity; return operators in topological order."""
        n = len(self.operators)
        indegree = [0] * n
        succ: List[List[int]] = [[] for _ in range(n)]
        for edge in self.edges:
            (s_op, s_port), (t_op, t_port) = edge.source, edge.target
            if not (0 <= s_op < n and 0 <= t_op < n):
                raise ConfigurationError(f"dangling edge {edge.source} -> {edge.target}")
            if not 0 <= s_port < self.operators[s_op].outputs:
                raise ConfigurationError(f"edge from missing output port {edge.source}")
            if not 0 <= t_port < self.operators[t_op].inputs:
                raise ConfigurationError(f"edge into missing input port {edge.target}")
            succ[s_op].append(t_op)
            indegree[t_op] += 1
        order = []
        ready = [op for op in range(n) if indegree[op] == 0]
        while ready:
            op = ready.pop(0)
            order.append(op)
            for nxt in succ[op]:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
        if len(order) != n:
            raise ConfigurationError("dataflow graph has a cycle")
        return order


# --- locations ---------------------------------------------------------------


class Locations:
    """Dense integer ids for every operator port, plus reachability."""

    def __init__(self, graph: DataflowGraph):
        self.input_loc: Dict[Tuple[int, int], int] = {}
        self.output_loc: Dict[Tuple[int, int], int] = {}
        self.describe: List[Tuple[str, int, int]] = []
        for spec in graph.operators:
            for port in range(spec.inputs):
                self.input_loc[(spec.id, port)] = len(self.describe)
                self.describe.append(("in", spec.id, port))
            for port in range(spec.outputs):
                self.output_loc[(spec.id, port)] = len(self.describe)
                self.describe.append(("out", spec.id, port))
        preds: Dict[int, List[int]] = {loc: [] for loc in range(len(self.describe))}
        for edge in graph.edges:
            preds[self.input_loc[edge.target]].append(self.output_loc[edge.source])
        for spec in graph.operators:
            ins = [self.input_loc[(spec.id, p)] for p in range(spec.inputs)]
            for port in range(spec.outputs):
                preds[self.output_loc[(spec.id, port)]].extend(ins)
        self.reach: Dict[int, List[int]] = {}
        for loc in self.input_loc.values():
            seen = {loc}
            stack = [loc]
            while stack:
                cur = stack.pop()
                for p in preds[cur]:
                    if p not in seen:
                        seen.add(p)
                        stack.append(p)
            self.reach[loc] = sorted(seen)

    def __len__(self) -> int:
        return len(self.describe)


# --- per-worker runtime ------------------------------------------------------


class Message(NamedTuple):
    time: Timestamp
    data: list
    sender: int


class _WorkerChanges(ChangeBatch):
    """Progress changes of one worker; also remembers locally held capabilities."""

    __slots__ = ("held",)

    def __init__(self):
        super().__init__()
        self.held: Dict[int, Dict[Timestamp, int]] = {}

    def update(self, location, time, delta):
        per = self.held.setdefault(location, {})
        value = per.get(time, 0) + delta
        if value:
            per[time] = value
        else:
            per.pop(time, None)
        super().update(location, time, delta)

    def count_message(self, location, time, delta):
        ChangeBatch.update(self, location, time, delta)

    def holds(self, location: int, time: Timestamp) -> bool:
        for t, n in self.held.get(location, {}).items():
            if n > 0 and t <= time:
                return True
        return False


class InputPort:
    __slots__ = ("ctx", "location", "queue")

    def __init__(self, ctx: "OperatorContext", location: int):
        self.ctx = ctx
        self.location = location
        self.queue: Deque[Message] = deque()

    @property
    def frontier(self) -> Antichain:
        return self.ctx.runtime.tracker.frontiers[self.location]

    def drain(self) -> List[Message]:
        if not self.queue:
            return []
        runtime = self.ctx.runtime
        out = list(self.queue)
        self.queue.clear()
        changes = runtime.changes
        for msg in out:
            changes.count_message(self.location, msg.time, -1)
            self.ctx.activation_times.add(msg.time)
            runtime.work_records += len(msg.data)
        runtime.activity += 1
        return out


class OutputPort:
    __slots__ = ("ctx", "location", "routes", "buffer")

    def __init__(self, ctx: "OperatorContext", location: int):
        self.ctx = ctx
        self.location = location
        self.routes: List[Tuple[int, int, int, Any]] = []
        self.buffer: Dict[Timestamp, list] = {}

    def give(self, time: Timestamp, records: Iterable[Any]) -> None:
        if not self._may_send(time):
            raise CapabilityError(f"no capability to send at {time!r} on location {self.location}")
        buf = self.buffer.get(time)
        if buf is None:
            buf = self.buffer[time] = []
        buf.extend(records)

    def _may_send(self, time: Timestamp) -> bool:
        if self.ctx.runtime.changes.holds(self.location, time):
            return True
        for t in self.ctx.activation_times:
            if t <= time:
                return True
        return False

    def flush(self) -> None:
        if not self.buffer:
            return
        buffered = self.buffer
        self.buffer = {}
        runtime = self.ctx.runtime
        for time, records in buffered.items():
            if not records:
                continue
            runtime.activity += 1
            for target_op, target_port, target_loc, pact in self.routes:
                if isinstance(pact, Pipeline):
                    runtime.deliver(runtime.index, target_op, target_port, target_loc, time, records)
                elif isinstance(pact, Broadcast):
                    for dest in range(runtime.peers):
                        runtime.deliver(dest, target_op, target_port, target_loc, time, records)
                else:
                    fn = pact.fn
                    peers = runtime.peers
                    if peers == 1:
                        runtime.deliver(0, target_op, target_port, target_loc, time, records)
                        continue
                    parts: List[list] = [[] for _ in range(peers)]
                    for record in records:
                        parts[fn(record) % peers].append(record)
                    for dest, part in enumerate(parts):
                        if part:
                            runtime.deliver(dest, target_op, target_port, target_loc, time, part)


class OperatorContext:
    """What an operator instance sees on one worker."""

    def __init__(self, runtime: "WorkerRuntime", spec: OperatorSpec):
        self.runtime = runtime
        self.op_id = spec.id
        self.name = spec.name
        self.worker = runtime.index
        self.peers = runtime.peers
        locs = runtime.locations
        self.inputs = [InputPort(self, locs.input_loc[(spec.id, p)]) for p in range(spec.inputs)]
        self.outputs = [OutputPort(self, locs.output_loc[(spec.id, p)]) for p in range(spec.outputs)]
        self.activation_times: set = set()
        self._initial = [Capability(MINIMUM, port.location, runtime.changes) for port in self.outputs]
        self._claimed = False

    def claim_initial(self) -> List[Capability]:
        """Take ownership of the capabilities every output starts with.

        Operators that do not claim them have them dropped after construction.
        """
        self._claimed = True
        return self._initial

    @property
    def shared(self) -> Dict[str, Any]:
        return self.runtime.shared

    def capability(self, output: int, time: Timestamp) -> Capability:
        """Retain a capability at ``time``; legal only for times in advance of a held one
        or of a message drained during this activation."""
        port = self.outputs[output]
        if not port._may_send(time):
            raise CapabilityError(f"cannot retain a capability at {time!r}")
        return Capability(time, port.location, self.runtime.changes)

    def frontier_at(self, location: int) -> Antichain:
        return self.runtime.tracker.frontiers[location]

    def watch(self, location: int) -> None:
        """Activate this operator whenever the frontier at ``location`` changes."""
        self.runtime.watchers.setdefault(location, set()).add(self.op_id)

    def activate(self) -> None:
        """Ask to be run again on the next step even if nothing changes."""
        self.runtime.scheduled.add(self.op_id)


class _Instance:
    __slots__ = ("ctx", "logic")

    def __init__(self, ctx: OperatorContext, logic: Callable[[], None]):
        self.ctx = ctx
        self.logic = logic


class WorkerRuntime:
    """One worker's copy of the dataflow, its progress view and its inboxes."""

    def __init__(self, cluster: "Cluster", index: int):
        self.cluster = cluster
        self.index = index
        self.peers = cluster.graph.workers
        self.batch = cluster.graph.batch
        self.locations = cluster.locations
        self.tracker = ProgressTracker(len(self.locations), self.locations.reach)
        self.changes = _WorkerChanges()
        self.shared: Dict[str, Any] = {}
        self.captured: Dict[int, list] = {}
        self.inbox_progress: Deque[list] = deque()
        self.inbox_data: Deque[tuple] = deque()
        self.instances: List[Optional[_Instance]] = [None] * len(cluster.graph.operators)
        self.order: List[_Instance] = []
        self.input_handles: Dict[int, "InputHandle"] = {}
        # operators to run on the next step, and who to wake on frontier changes
        self.scheduled: set = set()
        self.watchers: Dict[int, set] = {}
        self.poisoned: Optional[BaseException] = None
        self.activity = 0
        self.work_records = 0
        self.work_bytes = 0
        self.steps = 0

    def _instantiate(self, order: Sequence[int]) -> None:
        graph = self.cluster.graph
        contexts = {}
        for spec in graph.operators:
            contexts[spec.id] = OperatorContext(self, spec)
        for edge in graph.edges:
            s_op, s_port = edge.source
            t_op, t_port = edge.target
            contexts[s_op].outputs[s_port].routes.append(
                (t_op, t_port, self.locations.input_loc[edge.target], edge.pact)
            )
        for op in order:
            spec = graph.operators[op]
            ctx = contexts[op]
            logic = spec.constructor(ctx)
            if not ctx._claimed:
                for cap in ctx._initial:
                    cap.drop()
            inst = _Instance(ctx, logic)
            self.instances[op] = inst
            self.order.append(inst)
            for port in ctx.inputs:
                ctx.watch(port.location)
            self.scheduled.add(op)

    def deliver(self, dest: int, target_op: int, target_port: int, target_loc: int, time, records: list) -> None:
        batch = self.batch
        changes = self.changes
        for start in range(0, len(records), batch):
            chunk = records[start:start + batch] if len(records) > batch else records
            changes.count_message(target_loc, time, +1)
            if dest == self.index:
                self.instances[target_op].ctx.inputs[target_port].queue.append(Message(time, list(chunk), dest))
                self.scheduled.add(target_op)
            else:
                payload = pickle.dumps(chunk, protocol=pickle.HIGHEST_PROTOCOL)
                self.work_bytes += len(payload)
                self.cluster.runtimes[dest].inbox_data.append((target_op, target_port, time, payload, self.index))

    def step(self) -> bool:
        """One scheduling quantum; returns whether anything happened."""
        if self.poisoned is not None:
            raise RuntimeError(f"worker {self.index} is poisoned") from self.poisoned
        self.steps += 1
        did = False
        if self.inbox_progress:
            self.absorb_progress()
            did = True
        data = self.inbox_data
        while data:
            target_op, target_port, time, payload, sender = data.popleft()
            self.work_bytes += len(payload)
            records = pickle.loads(payload)
            self.instances[target_op].ctx.inputs[target_port].queue.append(Message(time, records, sender))
            self.scheduled.add(target_op)
            did = True
        self.activity = 0
        try:
            scheduled = self.scheduled
            for inst in self.order:
                ctx = inst.ctx
                if ctx.op_id not in scheduled:
                    continue
                scheduled.discard(ctx.op_id)
                inst.logic()
                for port in ctx.outputs:
                    if port.buffer:
                        port.flush()
                ctx.activation_times.clear()
        except BaseException as exc:
            self.poisoned = exc
            raise
        if self.flush_progress() or self.activity:
            did = True
        return did

    def absorb_progress(self) -> bool:
        """Apply progress updates received so far and schedule affected operators."""
        inbox = self.inbox_progress
        if not inbox:
            return False
        merged = []
        while inbox:
            merged.extend(inbox.popleft())
        watchers = self.watchers
        scheduled = self.scheduled
        for location, _ in self.tracker.apply(merged):
            woken = watchers.get(location)
            if woken:
                scheduled.update(woken)
        return True

    def flush_progress(self) -> bool:
        if self.changes.is_empty():
            return False
        batch = self.changes.drain()
        for peer in self.cluster.runtimes:
            peer.inbox_progress.append(batch)
        return True

    def input(self, spec: InputSpec) -> "InputHandle":
        return self.input_handles[spec.op]

    def probe(self, spec: ProbeSpec) -> "Probe":
        inst = self.instances[spec.op]
        return Probe(self, inst.ctx.inputs[0].location)

    def captured_records(self, spec: CaptureSpec) -> list:
        return self.captured.get(spec.op, [])


# --- inputs and probes -------------------------------------------------------


def _input_operator(ctx: OperatorContext):
    handle = InputHandle(ctx)
    ctx.runtime.input_handles[ctx.op_id] = handle

    def logic():
        handle._flush()

    return logic


class InputHandle:
    """Feeds records into the dataflow on one worker."""

    def __init__(self, ctx: OperatorContext):
        self._ctx = ctx
        self._output = ctx.outputs[0]
        self._cap: Optional[Capability] = ctx.claim_initial()[0]

    @property
    def time(self) -> Timestamp:
        if self._cap is None:
            raise UsageError("input is closed")
        return self._cap.time

    @property
    def closed(self) -> bool:
        return self._cap is None

    def send(self, records: Iterable[Any]) -> None:
        if self._cap is None:
            raise UsageError("send after close")
        self._output.give(self._cap.time, records)
        self._ctx.runtime.scheduled.add(self._ctx.op_id)

    def send_one(self, record: Any) -> None:
        self.send((record,))

    def advance_to(self, time: Timestamp) -> None:
        if self._cap is None:
            raise UsageError("advance after close")
        if not self._cap.time <= time:
            raise UsageError(f"cannot advance input from {self._cap.time!r} back to {time!r}")
        if time != self._cap.time:
            self._flush()
            self._cap.downgrade(time)

    def close(self) -> None:
        if self._cap is not None:
            self._flush()
            self._cap.drop()
            self._cap = None

    def _flush(self) -> None:
        if self._output.buffer:
            self._output.flush()


def input_send(handle: InputHandle, records: Iterable[Any]) -> None:
    handle.send(records)


def input_advance(handle: InputHandle, time: Timestamp) -> None:
    handle.advance_to(time)


def input_close(handle: InputHandle) -> None:
    handle.close()


class Probe:
    """Observes the frontier at one input location, as seen by one worker."""

    def __init__(self, runtime: WorkerRuntime, location: int):
        self.runtime = runtime
        self.location = location

    @property
    def frontier(self) -> Antichain:
        return self.runtime.tracker.frontiers[self.location]

    def less_equal(self, time: Timestamp) -> bool:
        """True while ``time`` may still appear at the probed location."""
        return self.frontier.less_equal(time)

    def passed(self, time: Timestamp) -> bool:
        return not self.frontier.less_equal(time)


def probe_frontier(probe: Probe) -> Antichain:
    return probe.frontier


# --- the cluster and its schedulers -----------------------------------------


class Cluster:
    """The set of worker runtimes for one dataflow."""

    def __init__(self, graph: DataflowGraph):
        self.graph = graph
        order = graph.validate()
        self.locations = Locations(graph)
        self.runtimes = [WorkerRuntime(self, w) for w in range(graph.workers)]
        for runtime in self.runtimes:
            runtime._instantiate(order)
        # initial capabilities are known to everyone before the first step
        initial = []
        for runtime in self.runtimes:
            initial.extend(runtime.changes.drain())
        for runtime in self.runtimes:
            tracker = runtime.tracker
            checked, tracker.check_monotone = tracker.check_monotone, False
            tracker.apply(initial)
            tracker.check_monotone = checked

    def __len__(self) -> int:
        return len(self.runtimes)

    def __getitem__(self, index: int) -> WorkerRuntime:
        return self.runtimes[index]

    def __iter__(self):
        return iter(self.runtimes)

    def inputs(self, spec: InputSpec) -> List[InputHandle]:
        return [rt.input(spec) for rt in self.runtimes]

    def probes(self, spec: ProbeSpec) -> List[Probe]:
        return [rt.probe(spec) for rt in self.runtimes]

    def captured(self, spec: CaptureSpec) -> List[list]:
        return [rt.captured_records(spec) for rt in self.runtimes]

    def step_all(self) -> bool:
        did = False
        for rt in self.runtimes:
            did = rt.step() or did
        return did

    def run_until(
        self,
        predicate: Callable[[], bool],
        *,
        max_steps: int = 10**6,
        seed: Optional[int] = None,
        threaded: bool = False,
        timeout: Optional[float] = None,
        before_step: Optional[Callable[[int], None]] = None,
        idle_sleep: float = 0.0,
        turns: bool = False,
    ) -> int:
        """Step until ``predicate()`` holds; returns the number of worker steps taken.

        In threaded mode a worker that found nothing to do sleeps for
        ``idle_sleep`` seconds before trying again. With ``turns`` the
        threads step one after another in worker order instead of competing
        for the interpreter lock.
        """
        if threaded:
            return self._run_threaded(predicate, max_steps, timeout, before_step, idle_sleep, turns)
        rng = random.Random(seed) if seed is not None else None
        steps = 0
        workers = len(self.runtimes)
        w = 0
        while not predicate():
            if steps >= max_steps:
                raise LivenessError(f"predicate still false after {steps} steps")
            if rng is not None:
                w = rng.randrange(workers)
            if before_step is not None:
                before_step(w)
            self.runtimes[w].step()
            steps += 1
            if rng is None:
                w = (w + 1) % workers
        return steps

    def run_to_quiescence(self, *, max_steps: int = 10**6, seed: Optional[int] = None) -> int:
        """Step until a full round of every worker does nothing."""
        steps = 0
        idle = 0
        workers = len(self.runtimes)
        rng = random.Random(seed) if seed is not None else None
        w = 0
        while idle < workers:
            if steps >= max_steps:
                raise LivenessError(f"no quiescence after {steps} steps")
            if rng is not None:
                # random order, but quiescence still needs every worker to be idle in a row
                order = list(range(workers))
                rng.shuffle(order)
                did = False
                for i in order:
                    did = self.runtimes[i].step() or did
                    steps += 1
                idle = 0 if did else workers
                continue
            did = self.runtimes[w].step()
            steps += 1
            idle = 0 if did else idle + 1
            w = (w + 1) % workers
        return steps

    def _run_threaded(self, predicate, max_steps, timeout, before_step, idle_sleep=0.0, turns=False) -> int:
        stop = threading.Event()
        errors: List[BaseException] = []
        counter = [0]
        deadline = None if timeout is None else _time.monotonic() + timeout
        workers = len(self.runtimes)
        # with ``turns`` workers step one after another; a plain lock per worker
        # is the cheapest baton to pass between threads
        batons = [threading.Lock() for _ in range(workers)]
        for baton in batons[1:]:
            baton.acquire()

        def pass_baton(w: int) -> None:
            try:
                batons[w].release()
            except RuntimeError:  # already released by halt()
                pass

        def halt():
            stop.set()
            for w in range(workers):
                pass_baton(w)

        def body(w: int):
            rt = self.runtimes[w]
            try:
                while not stop.is_set():
                    if turns:
                        batons[w].acquire()
                        if stop.is_set():
                            break
                    if before_step is not None:
                        before_step(w)
                    did = rt.step()
                    if w == 0:
                        counter[0] += 1
                        if predicate():
                            halt()
                        elif counter[0] >= max_steps or (deadline is not None and _time.monotonic() > deadline):
                            errors.append(LivenessError(f"predicate still false after {counter[0]} steps"))
                            halt()
                    if not did:
                        _time.sleep(idle_sleep)
                    if turns:
                        pass_baton((w + 1) % workers)
            except BaseException as exc:  # propagate to the caller
                errors.append(exc)
                halt()

        threads = [threading.Thread(target=body, args=(w,), name=f"worker-{w}", daemon=True) for w in range(workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        return counter[0]


def build_dataflow(graph: DataflowGraph) -> Cluster:
    return Cluster(graph)


def step_worker(runtime: WorkerRuntime) -> bool:
    return runtime.step()


def run_until(cluster: Cluster, predicate: Callable[[], bool], **kwargs) -> int:
    return cluster.run_until(predicate, **kwargs)
