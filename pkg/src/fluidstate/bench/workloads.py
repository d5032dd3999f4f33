"""Key generation and the counting workloads used by the benchmarks."""

from __future__ import annotations

import hashlib
from array import array
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from ..dataflow import ConfigurationError, Exchange, Stream
from ..routing import check_bins

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SEED_MULT = 0xD1B54A32D192ED03

WORKLOADS = ("wordcount", "keycount", "hashcount")


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    z = x.astype(np.uint64) + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _seed_offset(seed: int) -> int:
    return (seed * _SEED_MULT) & MASK64


def generate_record(seed: int, i: int, domain: int) -> tuple:
    """Record ``i`` of the stream for ``seed``: a uniform key in [0, domain) and +1."""
    if domain < 1:
        raise ValueError("domain must be at least 1")
    return splitmix64((i + _seed_offset(seed)) & MASK64) % domain, 1


def generate_keys(seed: int, indices: np.ndarray, domain: int) -> np.ndarray:
    """Vectorized keys of :func:`generate_record` for many indices."""
    if domain < 1:
        raise ValueError("domain must be at least 1")
    with np.errstate(over="ignore"):
        x = indices.astype(np.uint64) + np.uint64(_seed_offset(seed))
        return splitmix64_array(x) % np.uint64(domain)


def word_hash(word: str) -> int:
    return int.from_bytes(hashlib.blake2b(word.encode(), digest_size=8).digest(), "big")


class KeyCountBin:
    """Counts for a contiguous key range, stored densely."""

    __slots__ = ("lo", "counts")

    def __init__(self, lo: int, counts: array):
        self.lo = lo
        self.counts = counts

    def __eq__(self, other):
        return isinstance(other, KeyCountBin) and self.lo == other.lo and self.counts == other.counts


@dataclass
class Workload:
    """Everything needed to instantiate one counting workload."""

    name: str
    domain: int
    bins: int
    exchange: Callable[[Any], int]
    fold: Callable
    state_factory: Callable[[int], Any]
    make_records: Callable[[List[int]], list]
    to_entries: Optional[Callable] = None
    from_entries: Optional[Callable] = None
    native_key: Callable[[Any], int] = field(default=lambda r: r[0])


def _count_fold(time, records, state, notificator):
    out = []
    get = state.get
    for key, delta in records:
        count = get(key, 0) + delta
        state[key] = count
        out.append((key, count))
    return out


def _keycount_fold(time, records, state, notificator):
    out = []
    lo = state.lo
    counts = state.counts
    for key, delta in records:
        i = key - lo
        count = counts[i] + delta
        counts[i] = count
        out.append((key, count))
    return out


def _keycount_to_entries(state: KeyCountBin) -> list:
    # Snapshots carry (key, count) entries like any other bin, so moving a
    # bin costs time proportional to its keys.
    return list(zip(range(state.lo, state.lo + len(state.counts)), state.counts))


def _keycount_from_entries(bin_id: int, entries: list) -> KeyCountBin:
    if not entries:
        return KeyCountBin(0, array("q"))
    lo = entries[0][0]
    return KeyCountBin(lo, array("q", [c for _, c in entries]))


def key_range(b: int, bins: int, domain: int) -> range:
    """Keys that the range exchange of ``keycount`` sends to bin ``b``."""
    return range(-(-b * domain // bins), -(-(b + 1) * domain // bins))


def _grouped_by_bin(hashes: np.ndarray, bins: int) -> List[np.ndarray]:
    shift = np.uint64(64 - check_bins(bins))
    if bins == 1:
        owner = np.zeros(len(hashes), dtype=np.int64)
    else:
        owner = (hashes >> shift).astype(np.int64)
    order = np.argsort(owner, kind="stable")
    splits = np.searchsorted(owner[order], np.arange(1, bins))
    return np.split(order, splits)


def make_workload(name: str, domain: int, bins: int, preload: bool = True) -> Workload:
    """Build a workload; with ``preload`` every key starts with a count of one."""
    check_bins(bins)
    if domain < 1:
        raise ConfigurationError("domain must be at least 1")
    init = 1 if preload else 0

    if name == "keycount":

        def exchange(record, _d=domain):
            return (record[0] << 64) // _d

        def factory(b):
            keys = key_range(b, bins, domain)
            return KeyCountBin(keys.start, array("q", [init]) * len(keys))

        return Workload(
            name, domain, bins, exchange, _keycount_fold, factory, _int_records,
            _keycount_to_entries, _keycount_from_entries,
        )

    if name == "hashcount":
        members = None
        if preload:
            members = _grouped_by_bin(splitmix64_array(np.arange(domain, dtype=np.uint64)), bins)

        def factory(b):
            if members is None:
                return {}
            return dict.fromkeys(members[b].tolist(), init)

        return Workload(name, domain, bins, lambda r: splitmix64(r[0]), _count_fold, factory, _int_records)

    if name == "wordcount":
        members = None
        if preload:
            hashes = np.fromiter((word_hash(f"w{k}") for k in range(domain)), dtype=np.uint64, count=domain)
            members = _grouped_by_bin(hashes, bins)

        def factory(b):
            if members is None:
                return {}
            return dict.fromkeys((f"w{k}" for k in members[b].tolist()), init)

        return Workload(
            name, domain, bins, lambda r: word_hash(r[0]), _count_fold, factory, _word_records,
            native_key=lambda r: word_hash(r[0]),
        )

    raise ConfigurationError(f"unknown workload {name!r}")


def _int_records(keys: List[int]) -> list:
    return [(k, 1) for k in keys]


def _word_records(keys: List[int]) -> list:
    return [(f"w{k}", 1) for k in keys]


def native_count(stream: Stream, workload: Workload, preload: bool = True) -> Stream:
    """Non-migratable baseline: plain exchange by key, counts kept per worker."""
    key_of = workload.native_key

    def build(ctx):
        counts: Dict[Any, int] = {}
        if preload:
            for b in range(workload.bins):
                state = workload.state_factory(b)
                if isinstance(state, KeyCountBin):
                    keys = range(state.lo, state.lo + len(state.counts))
                    items = zip(keys, state.counts)
                else:
                    items = state.items()
                for key, value in items:
                    if key_of((key, 0)) % ctx.peers == ctx.worker:
                        counts[key] = value
        inp = ctx.inputs[0]
        out = ctx.outputs[0]

        def logic():
            for time, data, _ in inp.drain():
                emitted = []
                for key, delta in data:
                    c = counts.get(key, 0) + delta
                    counts[key] = c
                    emitted.append((key, c))
                out.give(time, emitted)

        return logic

    return stream.unary("native-count", build, Exchange(key_of))
