"""Migration plans: which bins move when, and the driver that issues them."""

from __future__ import annotations

import time as _time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from .dataflow import ConfigurationError, InputHandle, LivenessError, Probe
from .routing import ControlInstruction

Move = Tuple[int, int]  # (bin, destination worker)
Configuration = List[int]

STRATEGIES = ("all-at-once", "batched", "fluid")


def check_configuration(config: Sequence[int], workers: Optional[int] = None) -> None:
    for b, w in enumerate(config):
        if w < 0 or (workers is not None and w >= workers):
            raise ConfigurationError(f"bin {b} assigned to invalid worker {w}")


def diff_configurations(c1: Sequence[int], c2: Sequence[int]) -> List[Move]:
    """Bins whose owner differs, with their new owner, in ascending bin order."""
    if len(c1) != len(c2):
        raise ConfigurationError(f"configurations differ in length ({len(c1)} vs {len(c2)})")
    return [(b, w2) for b, (w1, w2) in enumerate(zip(c1, c2)) if w1 != w2]


def apply_moves(config: Sequence[int], moves: Iterable[Move]) -> Configuration:
    out = list(config)
    for b, w in moves:
        out[b] = w
    return out


def balanced_configuration(bins: int, workers: int) -> Configuration:
    return [b % workers for b in range(bins)]


def skewed_configuration(bins: int, workers: int) -> Configuration:
    """Half the bins of the first half of the workers moved to the second half.

    Starting from the balanced layout this moves a quarter of all bins when
    the worker count is even.
    """
    half = workers // 2
    config = balanced_configuration(bins, workers)
    if half == 0:
        return config
    for b in range(bins):
        w = b % workers
        if w < half and (b // workers) % 2 == 0:
            config[b] = w + half
    return config


@dataclass
class MigrationPlan:
    steps: List[List[Move]]
    strategy: str
    gap: int = 0
    start: int = 0

    def moves(self) -> List[Move]:
        return [m for step in self.steps for m in step]

    def __len__(self) -> int:
        return len(self.steps)


def _ordered(diff: Iterable[Move]) -> List[Move]:
    moves = sorted(diff)
    if len({b for b, _ in moves}) != len(moves):
        raise ConfigurationError("a bin appears twice in the diff")
    return moves


def plan_all_at_once(diff: Iterable[Move], t: int = 0, gap: int = 0) -> MigrationPlan:
    moves = _ordered(diff)
    return MigrationPlan([moves] if moves else [], "all-at-once", gap, t)


def plan_batched(diff: Iterable[Move], t0: int = 0, batch_size: int = 1, gap: int = 0) -> MigrationPlan:
    if batch_size < 1:
        raise ConfigurationError("batch size must be at least 1")
    moves = _ordered(diff)
    steps = [moves[i:i + batch_size] for i in range(0, len(moves), batch_size)]
    return MigrationPlan(steps, "batched", gap, t0)


def plan_fluid(diff: Iterable[Move], t0: int = 0, gap: int = 0) -> MigrationPlan:
    return MigrationPlan([[m] for m in _ordered(diff)], "fluid", gap, t0)


def group_moves(moves: Iterable[Move], current: Sequence[int], limit: Optional[int] = None) -> List[List[Move]]:
    """Pack moves into steps where no two moves share a source or a destination.

    First-fit greedy over moves in bin order; ``limit`` caps the moves per step.
    """
    steps: List[List[Move]] = []
    used: List[Tuple[set, set]] = []
    for b, dest in _ordered(moves):
        src = current[b]
        for step, (sources, dests) in zip(steps, used):
            if src not in sources and dest not in dests and (limit is None or len(step) < limit):
                step.append((b, dest))
                sources.add(src)
                dests.add(dest)
                break
        else:
            steps.append([(b, dest)])
            used.append(({src}, {dest}))
    return steps


def make_plan(
    strategy: str,
    c1: Sequence[int],
    c2: Sequence[int],
    *,
    batch_size: int = 1,
    gap: int = 0,
    grouped: bool = False,
) -> MigrationPlan:
    diff = diff_configurations(c1, c2)
    if strategy == "all-at-once":
        return plan_all_at_once(diff, gap=gap)
    if strategy == "fluid":
        plan = plan_fluid(diff, gap=gap)
        if grouped:
            plan.steps = group_moves(diff, c1)
        return plan
    if strategy == "batched":
        plan = plan_batched(diff, batch_size=batch_size, gap=gap)
        if grouped:
            plan.steps = [s for batch in plan.steps for s in group_moves(batch, c1)]
        return plan
    raise ConfigurationError(f"unknown strategy {strategy!r}")


@dataclass
class StepRecord:
    time: int
    moves: List[Move]
    issued_ns: int
    completed_ns: Optional[int] = None


@dataclass
class MigrationReport:
    strategy: str
    steps: List[StepRecord] = field(default_factory=list)

    @property
    def duration_ns(self) -> int:
        if not self.steps or self.steps[-1].completed_ns is None:
            return 0
        return self.steps[-1].completed_ns - self.steps[0].issued_ns

    @property
    def first_issue_ns(self) -> Optional[int]:
        return self.steps[0].issued_ns if self.steps else None

    @property
    def last_completion_ns(self) -> Optional[int]:
        return self.steps[-1].completed_ns if self.steps else None

    @property
    def complete(self) -> bool:
        return all(s.completed_ns is not None for s in self.steps)


class PlanDriver:
    """Issues a plan one step at a time, each after the previous one completed.

    ``poll`` never blocks, so it can run inside a worker's scheduling loop.
    Each step takes effect at the control handle's current time plus
    ``gap``; it is complete once ``probe`` has passed that time.
    """

    def __init__(self, plan: MigrationPlan, control: InputHandle, probe: Probe, clock: Callable[[], int] = _time.monotonic_ns):
        self.plan = plan
        self.control = control
        self.probe = probe
        self.clock = clock
        self.remaining = deque(plan.steps)
        self.report = MigrationReport(plan.strategy)
        self._awaiting: Optional[StepRecord] = None

    @property
    def done(self) -> bool:
        return self._awaiting is None and not self.remaining

    def poll(self, now: Optional[int] = None) -> bool:
        """Advance the plan if possible; returns True once every step completed."""
        if self._awaiting is not None:
            if not self.probe.passed(self._awaiting.time):
                return False
            self._awaiting.completed_ns = self.clock() if now is None else now
            self._awaiting = None
        if not self.remaining:
            return True
        moves = self.remaining.popleft()
        t = self.control.time + self.plan.gap
        self.control.send([ControlInstruction(t, tuple(moves), 1)])
        record = StepRecord(t, list(moves), self.clock() if now is None else now)
        self.report.steps.append(record)
        self._awaiting = record
        return False


def drive_plan(
    plan: MigrationPlan,
    control: InputHandle,
    probe: Probe,
    cluster,
    *,
    inputs: Sequence[InputHandle] = (),
    max_steps: int = 10**7,
    clock: Callable[[], int] = _time.monotonic_ns,
    seed: Optional[int] = None,
) -> MigrationReport:
    """Blocking driver for the deterministic scheduler.

    After issuing a step at ``t`` every handle in ``inputs`` (and ``control``)
    that has not yet passed ``t`` is advanced to ``t + 1``, then the cluster
    runs until the probe passes ``t``.
    """
    driver = PlanDriver(plan, control, probe, clock)
    handles = [control] + [h for h in inputs if h is not control]
    budget = max_steps
    while not driver.poll():
        t = driver._awaiting.time
        for h in handles:
            if not h.closed and h.time <= t:
                h.advance_to(t + 1)
        try:
            budget -= cluster.run_until(lambda: probe.passed(t), max_steps=budget, seed=seed)
        except LivenessError as exc:
            raise LivenessError(f"migration step at {t} did not complete: {exc}") from exc
    return driver.report
