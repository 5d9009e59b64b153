"""plasmaflow: a memory-disaggregated immutable object store.

Store daemons each own a file-backed shared-memory arena; clients produce
and consume sealed immutable objects through descriptor handoff (payloads
never cross a socket), and stores resolve remote objects for their clients
over a synchronous store-to-store lookup protocol. Remote arena access is
emulated with a configurable penalty model.
"""

from .allocator import Allocator, AllocatorStats, FreeRegion
from .arena import (
    MemoryRegion,
    RegionKind,
    RemoteAccessModel,
    attach_remote,
    attach_writable,
    create_region,
    measure_local_bandwidth,
)
from .bench import (
    BENCH_MATRIX,
    BenchmarkSpec,
    MeasurementRecord,
    Phase,
    RunReport,
    Scenario,
    emit,
    run_benchmark,
    summarize,
)
from .client import ClientSession, ObjectView, connect
from .config import DaemonConfig, PeerConfig, load_config, parse_config
from .daemon import StoreDaemon
from .ipc import BufferDescriptor, Status
from .peer import LookupResponse, PeerClient, PeerEndpoint, PeerServer
from .store import ObjectId, ObjectState, Presence, Store, digest64

__version__ = "0.1.0"

__all__ = [
    "Allocator",
    "AllocatorStats",
    "BENCH_MATRIX",
    "BenchmarkSpec",
    "BufferDescriptor",
    "ClientSession",
    "DaemonConfig",
    "FreeRegion",
    "LookupResponse",
    "MeasurementRecord",
    "MemoryRegion",
    "ObjectId",
    "ObjectState",
    "ObjectView",
    "PeerClient",
    "PeerConfig",
    "PeerEndpoint",
    "PeerServer",
    "Phase",
    "Presence",
    "RegionKind",
    "RemoteAccessModel",
    "RunReport",
    "Scenario",
    "Status",
    "Store",
    "StoreDaemon",
    "attach_remote",
    "attach_writable",
    "connect",
    "create_region",
    "digest64",
    "emit",
    "load_config",
    "measure_local_bandwidth",
    "parse_config",
    "run_benchmark",
    "summarize",
]
