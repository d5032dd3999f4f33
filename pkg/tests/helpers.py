"""Randomized word-count trials under migration, and their sequential oracle."""

from __future__ import annotations

import pickle
import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Tuple

from fluidstate import (
    ControlInstruction,
    DataflowGraph,
    LivenessError,
    build_dataflow,
    hosted_bins,
    stateful_unary,
)
from fluidstate.bench.workloads import splitmix64
from fluidstate.routing import bin_for_key
from fluidstate.stateful import MigrationMetrics


# criterion number -> one PASS/FAIL line, printed at the end of the session
CRITERIA: Dict[int, str] = {}


def report_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)


def word_count(t, records, state, notificator):
    out = []
    for word, diff in records:
        state[word] = state.get(word, 0) + diff
        out.append((word, state[word]))
    return out


def key_hash(record):
    return splitmix64(record[0])


@dataclass
class Trial:
    seed: int
    workers: int
    bins: int
    keys: int
    epochs: int
    # (time, worker, [(word, diff), ...])
    inputs: List[Tuple[int, int, list]]
    # (send time, sending worker, instruction)
    control: List[Tuple[int, int, ControlInstruction]]


def make_trial(seed: int, max_records: int = 10**4) -> Trial:
    rng = random.Random(seed)
    workers = rng.randint(2, 4)
    bins = rng.choice([1, 4, 16])
    keys = rng.randint(1, 256)
    epochs = rng.randint(1, 30)
    total = rng.randint(0, max_records)
    inputs: Dict[Tuple[int, int], list] = defaultdict(list)
    for _ in range(total):
        t = rng.randrange(epochs)
        inputs[(t, rng.randrange(workers))].append((rng.randrange(keys), rng.choice((1, 1, 2, -1))))
    control = []
    t = 0
    while True:
        # back-to-back epochs about a third of the time
        t += 1 if rng.random() < 0.35 else rng.randint(2, 8)
        if t > epochs + 3 or len(control) > 12:
            break
        moves = [(b, rng.randrange(workers)) for b in rng.sample(range(bins), rng.randint(1, bins))]
        parts = [moves] if len(moves) < 2 or rng.random() < 0.6 else [moves[::2], moves[1::2]]
        send = max(0, t - rng.randint(0, 4))
        for part in parts:
            control.append((send, rng.randrange(workers), ControlInstruction(t, tuple(part), len(parts))))
    return Trial(
        seed,
        workers,
        bins,
        keys,
        epochs,
        [(t, w, recs) for (t, w), recs in sorted(inputs.items())],
        control,
    )


def owner_at(trial: Trial, t: int, b: int) -> int:
    """Independent configuration oracle: the latest move at or before ``t`` wins."""
    owner = b % trial.workers
    for when, _, instr in sorted(trial.control, key=lambda c: c[2].time):
        if instr.time <= t:
            for mb, w in instr.moves:
                if mb == b:
                    owner = w
    return owner


def oracle_outputs(trial: Trial) -> Dict[int, List[Tuple[int, int]]]:
    """Per key, the (time, count) sequence of a single-worker run with no migration."""
    counts: Dict[int, int] = defaultdict(int)
    out: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
    for t, _, records in sorted(trial.inputs, key=lambda x: x[0]):
        for word, diff in records:
            counts[word] += diff
            out[word].append((t, counts[word]))
    for seq in out.values():
        seq.sort(key=lambda x: x[0])
    return dict(out)


@dataclass
class TrialResult:
    per_key: Dict[int, List[Tuple[int, int]]]
    captured: list
    applications: list
    report: dict
    steps: int
    frontiers_empty: bool
    liveness_error: bool = False


def run_trial(trial: Trial, schedule_seed: int, budget: int = 10**7) -> TrialResult:
    g = DataflowGraph(trial.workers)
    cin, control = g.new_input("control")
    din, data = g.new_input("data")
    metrics = MigrationMetrics(record_applications=True)
    out = stateful_unary(control, data, key_hash, word_count, bins=trial.bins, metrics=metrics)
    probe = out.probe()
    cap = out.capture()
    cluster = build_dataflow(g)
    controls, datas, probes = cluster.inputs(cin), cluster.inputs(din), cluster.probes(probe)
    rng = random.Random(schedule_seed)

    by_time = defaultdict(list)
    for t, w, records in trial.inputs:
        by_time[t].append((w, records))
    sends = defaultdict(list)
    for send, w, instr in trial.control:
        sends[send].append((w, instr))
    last = max([trial.epochs] + list(sends))
    steps = 0
    for t in range(last + 1):
        for h in controls + datas:
            h.advance_to(t)
        for w, instr in sends.get(t, ()):
            controls[w].send([instr])
        for w, records in by_time.get(t, ()):
            datas[w].send(records)
        # a few random steps so migrations land mid-stream
        for _ in range(rng.randrange(3 * trial.workers)):
            cluster[rng.randrange(trial.workers)].step()
            steps += 1
    for h in controls + datas:
        h.close()
    liveness_error = False
    try:
        steps += cluster.run_until(
            lambda: all(p.frontier.is_empty() for p in probes), max_steps=budget, seed=schedule_seed
        )
    except LivenessError:
        liveness_error = True

    captured = cluster.captured(cap)
    flat = sorted(
        ((t, word, count) for per in captured for t, (word, count) in per),
        key=lambda x: x[0],
    )
    # stable sort by time keeps emission order within one time, and one time of
    # one key is always applied by a single worker
    per_key: Dict[int, List[Tuple[int, int]]] = defaultdict(list)
    for t, word, count in flat:
        per_key[word].append((t, count))
    report = {
        "bins_moved": metrics.bins_moved,
        "bytes_sent": dict(sorted(metrics.bytes_sent.items())),
        "bytes_received": dict(sorted(metrics.bytes_received.items())),
        "applications": list(metrics.applications),
    }
    return TrialResult(
        dict(per_key),
        captured,
        list(metrics.applications),
        report,
        steps,
        all(p.frontier.is_empty() for p in probes),
        liveness_error,
    )


def placement_violations(trial: Trial, result: TrialResult) -> list:
    return [(w, t, b) for w, t, b in result.applications if owner_at(trial, t, b) != w]


def fingerprint(result: TrialResult) -> bytes:
    return pickle.dumps((result.captured, result.report), protocol=4)


def bin_of(word: int, bins: int) -> int:
    return bin_for_key(splitmix64(word), bins)


# --- the two-worker walkthrough ------------------------------------------------------

# bins of 4 are the top two bits of the exchange value; b's bin starts on worker 0
WALKTHROUGH_BINS = {"a": 0, "b": 2, "c": 1, "f": 3}


def walkthrough_trace():
    """Run the walkthrough; return (events, probe frontiers, hosted bins) per phase."""
    g = DataflowGraph(2)
    cin, control_stream = g.new_input("control")
    din, data_stream = g.new_input("data")
    metrics = MigrationMetrics(record_events=True)
    out = stateful_unary(
        control_stream, data_stream, lambda r: WALKTHROUGH_BINS[r[0]] << 62, word_count, bins=4, metrics=metrics
    )
    probe = out.probe()
    cap = out.capture()
    cluster = build_dataflow(g)
    control, data, probes = cluster.inputs(cin), cluster.inputs(din), cluster.probes(probe)
    phases = []

    def phase():
        cluster.run_to_quiescence()
        phases.append((list(metrics.events), [p.frontier.elements for p in probes], hosted_bins(cluster, out)))
        metrics.events.clear()

    # b starts with a count of 3 on worker 0
    for h in control + data:
        h.advance_to(10)
    data[0].send([("b", 3)])
    for h in control + data:
        h.advance_to(42)
    cluster.run_to_quiescence()
    metrics.events.clear()

    # control at 42: both records wait in their routers
    data[0].advance_to(44)
    data[0].send([("a", 3)])
    data[1].advance_to(43)
    data[1].send([("c", 5)])
    phase()

    # everything at 45, with a move of b's bin to worker 1 effective at 45
    control[0].send([ControlInstruction(45, ((2, 1),))])
    for h in control + data:
        h.advance_to(45)
    data[1].send([("b", 1)])
    phase()

    # control passes 45 while worker 1's data input stays at 53
    for h in control:
        h.advance_to(55)
    data[0].advance_to(55)
    data[0].send([("f", 4)])
    data[1].advance_to(53)
    phase()

    # control passes 55: f is routed but must wait for the data frontier
    for h in control:
        h.advance_to(56)
    phase()

    for h in data:
        h.advance_to(56)
    phase()

    for h in control + data:
        h.close()
    cluster.run_to_quiescence()
    phases.append(cluster.captured(cap))
    return phases


WALKTHROUGH_GOLDEN = [
    (
        [("buffer", 0, 44, ("a", 3)), ("buffer", 1, 43, ("c", 5))],
        [(42,), (42,)],
        [[0, 2], [1, 3]],
    ),
    (
        [
            ("control", 0, 45, ((2, 1),)),
            ("control", 1, 45, ((2, 1),)),
            ("buffer", 1, 45, ("b", 1)),
            ("release", 0, 44, 0, ("a", 3)),
            ("release", 1, 43, 1, ("c", 5)),
            ("apply", 0, 44, 0, ((("a", 3),),), (("a", 3),)),
            ("apply", 1, 43, 1, ((("c", 5),),), (("c", 5),)),
        ],
        [(45,), (45,)],
        [[0, 2], [1, 3]],
    ),
    (
        [
            ("buffer", 0, 55, ("f", 4)),
            ("seal", 0, 45, ((2, 0, 1),)),
            ("migrate", 0, 45, 2, 1),
            ("seal", 1, 45, ((2, 0, 1),)),
            ("release", 1, 45, 1, ("b", 1)),
            ("install", 1, 45, 2),
            ("apply", 1, 45, 2, ((("b", 1),),), (("b", 4),)),
        ],
        [(53,), (53,)],
        [[0], [1, 2, 3]],
    ),
    (
        [("release", 0, 55, 1, ("f", 4))],
        [(53,), (53,)],
        [[0], [1, 2, 3]],
    ),
    (
        [("apply", 1, 55, 3, ((("f", 4),),), (("f", 4),))],
        [(56,), (56,)],
        [[0], [1, 2, 3]],
    ),
    [[(10, ("b", 3)), (44, ("a", 3))], [(43, ("c", 5)), (45, ("b", 4)), (55, ("f", 4))]],
]
