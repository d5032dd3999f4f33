"""Open-loop latency benchmarks for live migration."""

from .harness import BenchConfig, BenchResult, OpenLoopSource, measure_latency, measure_saturation, run_benchmark
from .histogram import LatencyHistogram, ccdf_rows, emit_ccdf, record_latency
from .workloads import generate_keys, generate_record, make_workload, native_count
