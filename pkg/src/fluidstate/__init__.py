"""Dataflow operators whose keyed state can move between workers while running."""

from .progress import (
    MINIMUM,
    Antichain,
    Capability,
    CapabilityError,
    ChangeBatch,
    Product,
    ProgressError,
    ProgressTracker,
    ProgressUpdate,
    antichain_insert,
    apply_progress,
    capability_downgrade,
    frontier_passed,
    in_advance_of,
)
from .dataflow import (
    Broadcast,
    Cluster,
    ConfigurationError,
    DataflowGraph,
    Exchange,
    InputHandle,
    LivenessError,
    Pipeline,
    Probe,
    Stream,
    UsageError,
    build_dataflow,
    exchange_route,
    input_advance,
    input_close,
    input_send,
    probe_frontier,
    run_until,
    step_worker,
)
from .routing import (
    ControlInstruction,
    ProtocolError,
    RoutingTable,
    bin_for_key,
    control_apply,
    format_control_lines,
    parse_control_lines,
    routing_lookup,
)
from .bins import Bin, BinSnapshot, BinStore, Notificator, NotificatorError, SnapshotDecodeError, snapshot_roundtrip
from .stateful import (
    MigrationMetrics,
    StatefulStream,
    hosted_bins,
    state_machine,
    stateful_binary,
    stateful_unary,
)

__version__ = "0.1.0"
