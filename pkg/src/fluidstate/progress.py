"""Timestamps, frontiers, capabilities and progress tracking.

Timestamps are any hashable values whose ``<=`` implements a partial
order. Plain ``int`` is the default instantiation; :class:`Product` is a
pair timestamp under the product order, useful for exercising code paths
that must not assume a total order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Hashable, Iterable, List, NamedTuple, Optional, Sequence, Tuple

Timestamp = Any

MINIMUM = 0


class ProgressError(RuntimeError):
    """Raised when progress information violates the protocol."""


class CapabilityError(ProgressError):
    """Raised on illegal capability use (backward downgrade, use after drop)."""


@dataclass(frozen=True)
class Product:
    """Pair timestamp under the product partial order."""

    outer: int
    inner: int

    def __le__(self, other: "Product") -> bool:
        return self.outer <= other.outer and self.inner <= other.inner

    def __lt__(self, other: "Product") -> bool:
        return self <= other and self != other

    def __ge__(self, other: "Product") -> bool:
        return other <= self

    def __gt__(self, other: "Product") -> bool:
        return other < self

    def __repr__(self) -> str:
        return f"({self.outer}, {self.inner})"


def less_equal(a: Timestamp, b: Timestamp) -> bool:
    return a <= b


class Antichain:
    """A set of mutually incomparable timestamps.

    An empty antichain describes a closed stream: no timestamp can arrive.
    """

    __slots__ = ("_elements",)

    def __init__(self, elements: Iterable[Timestamp] = ()):
        self._elements: Tuple[Timestamp, ...] = ()
        for t in elements:
            self.insert(t)

    @classmethod
    def from_elements_unchecked(cls, elements: Sequence[Timestamp]) -> "Antichain":
        chain = cls.__new__(cls)
        chain._elements = tuple(elements)
        return chain

    @property
    def elements(self) -> Tuple[Timestamp, ...]:
        return self._elements

    def insert(self, t: Timestamp) -> bool:
        """Insert ``t`` if no element is ``<=`` it; remove elements it dominates."""
        for e in self._elements:
            if e <= t:
                return False
        self._elements = tuple(e for e in self._elements if not t <= e) + (t,)
        return True

    def less_equal(self, t: Timestamp) -> bool:
        """True iff ``t`` is in advance of this frontier."""
        for e in self._elements:
            if e <= t:
                return True
        return False

    def less_than(self, t: Timestamp) -> bool:
        for e in self._elements:
            if e <= t and e != t:
                return True
        return False

    def dominates(self, other: "Antichain") -> bool:
        """True iff every element of ``other`` is in advance of ``self``."""
        return all(self.less_equal(t) for t in other._elements)

    def is_empty(self) -> bool:
        return not self._elements

    def __iter__(self):
        return iter(self._elements)

    def __len__(self) -> int:
        return len(self._elements)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Antichain):
            return set(self._elements) == set(other._elements)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(frozenset(self._elements))

    def __repr__(self) -> str:
        inner = ", ".join(repr(e) for e in sorted_if_possible(self._elements))
        return "{" + inner + "}"


def sorted_if_possible(elements: Iterable[Timestamp]) -> List[Timestamp]:
    items = list(elements)
    try:
        return sorted(items)
    except TypeError:
        return items


def in_advance_of(t: Timestamp, frontier: Antichain) -> bool:
    return frontier.less_equal(t)


def antichain_insert(frontier: Antichain, t: Timestamp) -> Antichain:
    result = Antichain.from_elements_unchecked(frontier.elements)
    result.insert(t)
    return result


def minimal_antichain(times: Iterable[Timestamp]) -> Antichain:
    return Antichain(times)


def frontier_passed(frontier: Antichain, t: Timestamp) -> bool:
    """True iff ``t`` can no longer appear: ``t`` is not in advance of ``frontier``."""
    return not frontier.less_equal(t)


class ProgressUpdate(NamedTuple):
    location: int
    time: Timestamp
    delta: int


class ChangeBatch:
    """Accumulates (location, time) -> delta, dropping entries that net to zero."""

    __slots__ = ("_updates",)

    def __init__(self):
        self._updates: Dict[Tuple[int, Timestamp], int] = {}

    def update(self, location: int, time: Timestamp, delta: int) -> None:
        key = (location, time)
        value = self._updates.get(key, 0) + delta
        if value:
            self._updates[key] = value
        else:
            self._updates.pop(key, None)

    def is_empty(self) -> bool:
        return not self._updates

    def drain(self) -> List[Tuple[int, Timestamp, int]]:
        """Take the accumulated (location, time, delta) triples."""
        out = [(loc, t, d) for (loc, t), d in self._updates.items()]
        self._updates = {}
        return out


class Capability:
    """A held right to produce output at ``time`` (or later) on one output port.

    Creating, dropping and downgrading a capability records +1/-1 updates in
    the owner's change batch; the worker broadcasts those at the end of its
    step.
    """

    __slots__ = ("_time", "location", "_changes", "_valid")

    def __init__(self, time: Timestamp, location: int, changes: ChangeBatch):
        self._time = time
        self.location = location
        self._changes = changes
        self._valid = True
        changes.update(location, time, +1)

    @property
    def time(self) -> Timestamp:
        return self._time

    @property
    def valid(self) -> bool:
        return self._valid

    def _check(self) -> None:
        if not self._valid:
            raise CapabilityError("capability used after drop")

    def downgrade(self, time: Timestamp) -> "Capability":
        self._check()
        if not self._time <= time:
            raise CapabilityError(f"cannot downgrade capability from {self._time!r} to {time!r}")
        if time != self._time:
            self._changes.update(self.location, self._time, -1)
            self._changes.update(self.location, time, +1)
            self._time = time
        return self

    def delayed(self, time: Timestamp) -> "Capability":
        """A new capability at ``time``, which must be in advance of this one."""
        self._check()
        if not self._time <= time:
            raise CapabilityError(f"cannot delay capability at {self._time!r} to {time!r}")
        return Capability(time, self.location, self._changes)

    def drop(self) -> None:
        if self._valid:
            self._changes.update(self.location, self._time, -1)
            self._valid = False

    def __repr__(self) -> str:
        state = "" if self._valid else ", dropped"
        return f"Capability({self._time!r} @ {self.location}{state})"


def capability_downgrade(cap: Capability, time: Timestamp) -> Capability:
    return cap.downgrade(time)


class ProgressTracker:
    """Per-worker view of outstanding pointstamps and the frontiers they imply.

    ``reach[l]`` lists every location whose pointstamps can result in
    timestamps at location ``l`` (including ``l`` itself); the dataflow is
    acyclic and operators do not advance timestamps internally, so
    reachability with identity summaries is all that is needed. Only input
    locations have frontiers.

    Counts may go transiently negative when updates from different workers
    arrive out of order; a time only holds a frontier back while its count
    is positive, so a stray negative count waits until the matching
    increment arrives.
    """

    def __init__(self, num_locations: int, reach: Dict[int, Sequence[int]], check_monotone: bool = True):
        self.num_locations = num_locations
        self.counts: List[Dict[Timestamp, int]] = [dict() for _ in range(num_locations)]
        self._positive: List[Tuple[Timestamp, ...]] = [() for _ in range(num_locations)]
        self.reach = {loc: tuple(sources) for loc, sources in reach.items()}
        self.downstream: Dict[int, List[int]] = {loc: [] for loc in range(num_locations)}
        for target, sources in self.reach.items():
            for source in sources:
                if not 0 <= source < num_locations:
                    raise ProgressError(f"unknown location {source}")
                self.downstream[source].append(target)
        self.frontiers: Dict[int, Antichain] = {loc: Antichain() for loc in self.reach}
        self.check_monotone = check_monotone

    def frontier(self, location: int) -> Antichain:
        return self.frontiers[location]

    def apply(self, batch: Iterable[Tuple[int, Timestamp, int]]) -> List[Tuple[int, Antichain]]:
        """Accumulate updates; return input locations whose frontier changed."""
        dirty_sources = set()
        counts = self.counts
        n = self.num_locations
        for location, time, delta in batch:
            if not 0 <= location < n:
                raise ProgressError(f"update for unknown location {location}")
            per_time = counts[location]
            old = per_time.get(time, 0)
            new = old + delta
            if new:
                per_time[time] = new
                if (old > 0) != (new > 0):
                    dirty_sources.add(location)
            else:
                del per_time[time]
                if old > 0:
                    dirty_sources.add(location)
        if not dirty_sources:
            return []

        positive = self._positive
        dirty_targets = set()
        for location in dirty_sources:
            fresh = _minimal([t for t, c in counts[location].items() if c > 0])
            if not _same(fresh, positive[location]):
                positive[location] = fresh
                dirty_targets.update(self.downstream[location])

        changed = []
        frontiers = self.frontiers
        for target in sorted(dirty_targets):
            candidates = []
            for source in self.reach[target]:
                candidates.extend(positive[source])
            fresh = _minimal(candidates)
            old_frontier = frontiers[target]
            if not _same(fresh, old_frontier.elements):
                if self.check_monotone and not all(old_frontier.less_equal(t) for t in fresh):
                    raise ProgressError(
                        f"frontier at location {target} retreated from {old_frontier!r} to {Antichain(fresh)!r}"
                    )
                chain = Antichain.from_elements_unchecked(fresh)
                frontiers[target] = chain
                changed.append((target, chain))
        return changed


def _minimal(items: List[Timestamp]) -> Tuple[Timestamp, ...]:
    if len(items) < 2:
        return tuple(items)
    if type(items[0]) is int:
        # a dataflow uses one timestamp type, and integers are totally ordered
        return (min(items),)
    out: List[Timestamp] = []
    for t in items:
        for e in out:
            if e <= t:
                break
        else:
            out = [e for e in out if not t <= e]
            out.append(t)
    return tuple(out)


def _same(a: Tuple[Timestamp, ...], b: Tuple[Timestamp, ...]) -> bool:
    if len(a) != len(b):
        return False
    if len(a) == 1:
        return a[0] == b[0]
    return set(a) == set(b)


def apply_progress(tracker: ProgressTracker, batch: Iterable[Tuple[int, Timestamp, int]]) -> List[Tuple[int, Antichain]]:
    return tracker.apply(batch)
