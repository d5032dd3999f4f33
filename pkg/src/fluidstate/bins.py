"""Per-worker bin stores, notificators and bin snapshots."""

from __future__ import annotations

import heapq
import pickle
import struct
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Tuple

from .progress import Timestamp
from .routing import ProtocolError

PendingEntry = Tuple[Timestamp, int, int, Any]  # (time, seq, port, record)

_MAGIC = b"BSN1"
_HEADER = struct.Struct("<4sII")  # magic, crc32, payload length


class SnapshotDecodeError(ValueError):
    pass


class NotificatorError(ValueError):
    pass


class Notificator:
    """Post-dated records of one bin, released in time order.

    Ties at one time keep their scheduling order.
    """

    __slots__ = ("_heap", "_seq", "_now")

    def __init__(self, entries: Iterable[PendingEntry] = (), next_seq: int = 0):
        self._heap: List[PendingEntry] = list(entries)
        heapq.heapify(self._heap)
        self._seq = next_seq
        self._now: Optional[Timestamp] = None

    def notify_at(self, time: Timestamp, record: Any, port: int = 0) -> None:
        """Present ``record`` to the operator again at ``time``."""
        now = self._now
        if now is not None and not (now <= time and now != time):
            raise NotificatorError(f"post-dated time {time!r} must be later than the current time {now!r}")
        heapq.heappush(self._heap, (time, self._seq, port, record))
        self._seq += 1

    def peek_time(self) -> Optional[Timestamp]:
        return self._heap[0][0] if self._heap else None

    def pop_at(self, time: Timestamp) -> List[PendingEntry]:
        out = []
        heap = self._heap
        while heap and heap[0][0] == time:
            out.append(heapq.heappop(heap))
        return out

    def drain(self, frontier) -> List[PendingEntry]:
        """Remove and return entries whose time is not in advance of ``frontier``."""
        out = []
        heap = self._heap
        while heap and not frontier.less_equal(heap[0][0]):
            out.append(heapq.heappop(heap))
        return out

    def entries(self) -> List[PendingEntry]:
        """All entries in drain order."""
        return sorted(self._heap)

    @property
    def next_seq(self) -> int:
        return self._seq

    def __len__(self) -> int:
        return len(self._heap)


class Bin:
    __slots__ = ("id", "state", "notificator")

    def __init__(self, bin_id: int, state: Any, notificator: Optional[Notificator] = None):
        self.id = bin_id
        self.state = state
        self.notificator = notificator if notificator is not None else Notificator()

    def snapshot(self, time: Timestamp, to_entries: Callable[[Any], list] = None) -> "BinSnapshot":
        entries = (to_entries or default_to_entries)(self.state)
        return BinSnapshot(self.id, time, entries, self.notificator.entries(), self.notificator.next_seq)

    @classmethod
    def from_snapshot(cls, snap: "BinSnapshot", from_entries: Callable[[int, list], Any] = None) -> "Bin":
        state = (from_entries or default_from_entries)(snap.bin, snap.entries)
        return cls(snap.bin, state, Notificator(snap.pending, snap.next_seq))


def default_to_entries(state: Any) -> list:
    return list(state.items())


def default_from_entries(bin_id: int, entries: list) -> Any:
    return dict(entries)


@dataclass
class BinSnapshot:
    bin: int
    time: Timestamp
    entries: list
    pending: List[PendingEntry] = field(default_factory=list)
    next_seq: int = 0

    def encode(self) -> bytes:
        payload = pickle.dumps(
            (self.bin, self.time, self.entries, self.pending, self.next_seq),
            protocol=pickle.HIGHEST_PROTOCOL,
        )
        return _HEADER.pack(_MAGIC, zlib.crc32(payload), len(payload)) + payload

    @classmethod
    def decode(cls, data: bytes) -> "BinSnapshot":
        if len(data) < _HEADER.size:
            raise SnapshotDecodeError("snapshot too short")
        magic, crc, length = _HEADER.unpack_from(data)
        payload = data[_HEADER.size:]
        if magic != _MAGIC or length != len(payload) or zlib.crc32(payload) != crc:
            raise SnapshotDecodeError("corrupt snapshot")
        try:
            b, time, entries, pending, next_seq = pickle.loads(payload)
        except Exception as exc:
            raise SnapshotDecodeError(f"undecodable snapshot: {exc}") from exc
        return cls(b, time, entries, [tuple(p) for p in pending], next_seq)


def snapshot_roundtrip(b: Bin, time: Timestamp = 0, to_entries=None, from_entries=None) -> Bin:
    return Bin.from_snapshot(BinSnapshot.decode(b.snapshot(time, to_entries).encode()), from_entries)


class BinStore:
    """The bins one worker currently hosts, shared by its router and state host."""

    def __init__(self):
        self._bins: Dict[int, Bin] = {}

    def __contains__(self, b: int) -> bool:
        return b in self._bins

    def __getitem__(self, b: int) -> Bin:
        try:
            return self._bins[b]
        except KeyError:
            raise ProtocolError(f"bin {b} is not hosted here") from None

    def get(self, b: int) -> Optional[Bin]:
        return self._bins.get(b)

    def __len__(self) -> int:
        return len(self._bins)

    def __iter__(self) -> Iterator[int]:
        return iter(self._bins)

    def install(self, b: Bin) -> None:
        if b.id in self._bins:
            raise ProtocolError(f"bin {b.id} installed twice")
        self._bins[b.id] = b

    def extract(self, b: int) -> Bin:
        try:
            return self._bins.pop(b)
        except KeyError:
            raise ProtocolError(f"cannot migrate bin {b}: not hosted here") from None

    def ids(self) -> List[int]:
        return sorted(self._bins)
