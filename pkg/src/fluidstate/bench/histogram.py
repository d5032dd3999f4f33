"""Log-linear latency histogram: 16 linear sub-buckets per power of two."""

from __future__ import annotations

import csv
import math
from typing import Iterator, List, Optional, TextIO, Tuple, Union

SUB_BITS = 4
SUB_BUCKETS = 1 << SUB_BITS
MAX_MAGNITUDE = 63
N_BUCKETS = (SUB_BUCKETS - 1) + (MAX_MAGNITUDE - SUB_BITS + 1) * SUB_BUCKETS


def bucket_index(value: int) -> int:
    v = max(int(value), 1)
    m = v.bit_length() - 1
    if m < SUB_BITS:
        return v - 1
    shift = m - SUB_BITS
    return (SUB_BUCKETS - 1) + shift * SUB_BUCKETS + ((v >> shift) - SUB_BUCKETS)


def bucket_bounds(index: int) -> Tuple[int, int]:
    """Inclusive (low, high) of the values mapped to ``index``."""
    if index < SUB_BUCKETS - 1:
        return index + 1, index + 1
    shift, sub = divmod(index - (SUB_BUCKETS - 1), SUB_BUCKETS)
    low = (SUB_BUCKETS + sub) << shift
    return low, low + (1 << shift) - 1


class LatencyHistogram:
    """Counts of nanosecond latencies; quantiles are reported as bucket upper bounds.

    Values below 1 are recorded as 1. The exact minimum and maximum are kept
    alongside the buckets.
    """

    def __init__(self):
        self.counts: List[int] = [0] * N_BUCKETS
        self.total = 0
        self.max_value = 0
        self.min_value: Optional[int] = None

    def record(self, value: int, count: int = 1) -> None:
        if count <= 0:
            return
        v = max(int(value), 1)
        self.counts[bucket_index(v)] += count
        self.total += count
        if v > self.max_value:
            self.max_value = v
        if self.min_value is None or v < self.min_value:
            self.min_value = v

    def merge(self, other: "LatencyHistogram") -> None:
        for i, c in enumerate(other.counts):
            if c:
                self.counts[i] += c
        self.total += other.total
        self.max_value = max(self.max_value, other.max_value)
        if other.min_value is not None and (self.min_value is None or other.min_value < self.min_value):
            self.min_value = other.min_value

    def quantile(self, q: float) -> int:
        if not self.total:
            return 0
        if not 0.0 <= q <= 1.0:
            raise ValueError("quantile must be in [0, 1]")
        rank = max(1, math.ceil(q * self.total))
        seen = 0
        for i, c in enumerate(self.counts):
            seen += c
            if seen >= rank:
                return min(bucket_bounds(i)[1], self.max_value)
        return self.max_value

    def buckets(self) -> Iterator[Tuple[int, int, int]]:
        """Non-empty buckets as (low, high, count)."""
        for i, c in enumerate(self.counts):
            if c:
                low, high = bucket_bounds(i)
                yield low, high, c

    def __len__(self) -> int:
        return self.total


def record_latency(h: LatencyHistogram, ns: int) -> None:
    h.record(ns)


def ccdf_rows(h: LatencyHistogram) -> List[Tuple[int, float]]:
    """Rows (latency_ns, fraction of recordings strictly greater)."""
    rows = []
    above = h.total
    for low, high, count in h.buckets():
        rows.append((low - 1, above / h.total))
        above -= count
        rows.append((high, above / h.total))
    return rows


def emit_ccdf(h: LatencyHistogram, path: Union[str, TextIO]) -> None:
    if isinstance(path, str):
        with open(path, "w", newline="") as fh:
            emit_ccdf(h, fh)
        return
    writer = csv.writer(path, lineterminator="\n")
    writer.writerow(["latency_ns", "ccdf"])
    for latency, frac in ccdf_rows(h):
        writer.writerow([latency, repr(frac)])
