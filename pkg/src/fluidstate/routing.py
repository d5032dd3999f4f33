"""Bins, control instructions and the time-indexed routing table."""

from __future__ import annotations

import io
from bisect import bisect_right
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

from .dataflow import ConfigurationError
from .progress import MINIMUM, Antichain, Timestamp

MASK64 = (1 << 64) - 1
MAX_BINS = 1 << 20


class ProtocolError(RuntimeError):
    """The migration protocol reached a state it rules out."""


def check_bins(bins: int) -> int:
    """Validate a bin count; return log2 of it."""
    if not isinstance(bins, int) or bins < 1 or bins > MAX_BINS or bins & (bins - 1):
        raise ConfigurationError(f"bin count must be a power of two in [1, 2^20], got {bins!r}")
    return bins.bit_length() - 1


def bin_for_key(hash_value: int, bins: int) -> int:
    """The bin of a 64-bit exchange value: its top log2(bins) bits."""
    shift = 64 - check_bins(bins)
    if shift == 64:
        return 0
    return (hash_value & MASK64) >> shift


@dataclass(frozen=True)
class ControlInstruction:
    """Moves that take effect at ``time``.

    ``count`` is how many instructions share ``time``; a receiver checks it
    has all of them before acting on the reconfiguration.
    """

    time: Timestamp
    moves: Tuple[Tuple[int, int], ...]
    count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "moves", tuple((int(b), int(w)) for b, w in self.moves))
        if self.count < 1:
            raise ValueError("count must be at least 1")


class RoutingTable:
    """Configuration function ``(time, bin) -> worker`` with buffered future updates.

    Sealed epochs are stored per bin as parallel sorted lists of start times
    and owners; bins that never moved only have an entry in ``current``.
    """

    def __init__(self, bins: int, workers: int, initial: Optional[Sequence[int]] = None):
        check_bins(bins)
        if workers < 1:
            raise ConfigurationError("workers must be positive")
        self.bins = bins
        self.workers = workers
        if initial is None:
            initial = [b % workers for b in range(bins)]
        if len(initial) != bins:
            raise ConfigurationError("initial configuration has the wrong length")
        self.current: List[int] = list(initial)
        self._history: Dict[int, Tuple[List[Timestamp], List[int]]] = {}
        self.pending: Dict[Timestamp, List[ControlInstruction]] = {}

    def control_apply(self, instr: ControlInstruction, control_frontier: Antichain) -> None:
        if not control_frontier.less_equal(instr.time):
            raise ProtocolError(f"instruction at {instr.time!r} arrived after the control frontier {control_frontier!r} sealed it")
        for b, w in instr.moves:
            if not 0 <= b < self.bins:
                raise ProtocolError(f"bin {b} out of range")
            if not 0 <= w < self.workers:
                raise ProtocolError(f"worker {w} out of range")
        self.pending.setdefault(instr.time, []).append(instr)

    def seal(self, control_frontier: Antichain) -> List[Tuple[Timestamp, List[Tuple[int, int, int]]]]:
        """Seal every pending epoch the frontier has passed, in time order.

        Returns ``(time, [(bin, old_owner, new_owner), ...])`` for each sealed
        epoch, listing only bins whose owner changes.
        """
        ready = sorted(t for t in self.pending if not control_frontier.less_equal(t))
        sealed = []
        for t in ready:
            instrs = self.pending.pop(t)
            expected = {i.count for i in instrs}
            if len(expected) != 1 or expected.pop() != len(instrs):
                raise ProtocolError(f"incomplete reconfiguration at {t!r}: got {len(instrs)} instruction(s)")
            target: Dict[int, int] = {}
            for instr in instrs:
                for b, w in instr.moves:
                    target[b] = w
            moves = []
            for b in sorted(target):
                old, new = self.current[b], target[b]
                if old == new:
                    continue
                hist = self._history.get(b)
                if hist is None:
                    hist = self._history[b] = ([MINIMUM], [old])
                hist[0].append(t)
                hist[1].append(new)
                self.current[b] = new
                moves.append((b, old, new))
            sealed.append((t, moves))
        return sealed

    def lookup(self, time: Timestamp, b: int) -> int:
        hist = self._history.get(b)
        if hist is None:
            return self.current[b]
        times, owners = hist
        return owners[bisect_right(times, time) - 1]

    def retire(self, before: Timestamp) -> None:
        """Forget epochs that ended at or before ``before``; lookups below it are no longer needed."""
        for b in list(self._history):
            times, owners = self._history[b]
            idx = bisect_right(times, before) - 1
            if idx > 0:
                del times[:idx]
                del owners[:idx]
            if len(times) == 1:
                del self._history[b]

    def configuration(self) -> List[int]:
        return list(self.current)


def routing_lookup(table: RoutingTable, time: Timestamp, b: int) -> int:
    return table.lookup(time, b)


def control_apply(table: RoutingTable, instr: ControlInstruction, control_frontier: Antichain) -> None:
    table.control_apply(instr, control_frontier)


# --- plan files: one move per line, "time,count,bin,worker" -----------------


def parse_control_lines(source: Union[str, TextIO, Iterable[str]]) -> List[ControlInstruction]:
    if isinstance(source, str):
        source = io.StringIO(source)
    instrs = []
    for lineno, raw in enumerate(source, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected time,count,bin,worker")
        try:
            time, count, b, w = (int(p) for p in parts)
        except ValueError:
            raise ValueError(f"line {lineno}: fields must be integers") from None
        if time < 0 or count < 1 or b < 0 or w < 0:
            raise ValueError(f"line {lineno}: negative field")
        instrs.append(ControlInstruction(time, ((b, w),), count))
    by_time: Dict[int, List[ControlInstruction]] = {}
    for instr in instrs:
        by_time.setdefault(instr.time, []).append(instr)
    for t, group in by_time.items():
        if any(i.count != len(group) for i in group):
            raise ValueError(f"time {t}: count field does not match the {len(group)} line(s) sharing it")
    return instrs


def format_control_lines(instrs: Iterable[ControlInstruction]) -> str:
    """Write instructions one move per line; counts are recomputed per time."""
    moves: Dict[int, List[Tuple[int, int]]] = {}
    for instr in instrs:
        moves.setdefault(instr.time, []).extend(instr.moves)
    lines = []
    for t in sorted(moves):
        group = moves[t]
        for b, w in group:
            lines.append(f"{t},{len(group)},{b},{w}")
    return "\n".join(lines) + ("\n" if lines else "")
