"""File-backed shared-memory arenas emulating disaggregated memory.

Each store daemon owns one arena backed by a plain file (ideally on tmpfs).
The owner maps it read-write; every other process maps the same file as a
read-only remote view. Remote views charge an access-penalty model on every
read so that the local/remote asymmetry of real disaggregated hardware is
reproduced without it: the effective remote bandwidth is a configurable
fraction of a locally calibrated reference bandwidth, plus a fixed per-call
latency. Writing through a remote view is forbidden outright, which is the
coherency stance the whole framework is built on (all mutation goes through
the owning store).
"""

from __future__ import annotations

import enum
import mmap
import os
import threading
import time
from dataclasses import dataclass

from .errors import CoherencyViolation, InvalidCapacity, IoFailure, OutOfBounds

DEFAULT_BANDWIDTH_RATIO = 0.885
DEFAULT_PEER_RPC_LATENCY_NS = 2_500_000

# Calibration reads 64 MiB through the same chunked copy path the benchmark
# harness uses, so the reference bandwidth matches what penalized reads are
# compared against.
CALIBRATION_BYTES = 64 * 1024 * 1024
CALIBRATION_CHUNK = 256 * 1024

# time.sleep can overshoot by more than a millisecond on coarse-tick
# kernels; sleep only the bulk of a wait and spin the rest.
_SLEEP_SLACK_S = 0.0015


class RegionKind(enum.Enum):
    LOCAL_OWNED = "local"
    REMOTE_VIEW = "remote"


@dataclass(frozen=True)
class RemoteAccessModel:
    """Penalty model applied to reads through a remote view.

    per_access_latency_ns is charged once per read call, bandwidth_ratio
    scales effective read throughput relative to the locally calibrated
    reference, and peer_rpc_latency_ns is charged per store-to-store lookup
    round trip (consumed by the peer client, carried here so one config
    object describes a peer completely).
    """

    per_access_latency_ns: int = 0
    bandwidth_ratio: float = DEFAULT_BANDWIDTH_RATIO
    peer_rpc_latency_ns: int = DEFAULT_PEER_RPC_LATENCY_NS

    def __post_init__(self) -> None:
        if self.per_access_latency_ns < 0:
            raise ValueError("per_access_latency_ns must be >= 0")
        if not (0.0 < self.bandwidth_ratio <= 1.0):
            raise ValueError("bandwidth_ratio must be in (0, 1]")
        if self.peer_rpc_latency_ns < 0:
            raise ValueError("peer_rpc_latency_ns must be >= 0")


_calibration_lock = threading.Lock()
_calibrated_bandwidth: float | None = None


def measure_local_bandwidth() -> float:
    """Measure local read bandwidth (bytes/second), cached per process.

    Runs a 64 MiB warm-up read over an anonymous buffer: one pass to fault
    pages in, one timed pass of fixed-size chunk copies into a reused
    destination. The result is the reference against which remote-view
    penalties are computed.
    """
    global _calibrated_bandwidth
    with _calibration_lock:
        if _calibrated_bandwidth is not None:
            return _calibrated_bandwidth
        src_mm = mmap.mmap(-1, CALIBRATION_BYTES)
        try:
            pattern = os.urandom(CALIBRATION_CHUNK)
            for off in range(0, CALIBRATION_BYTES, CALIBRATION_CHUNK):
                src_mm[off:off + CALIBRATION_CHUNK] = pattern
            src = memoryview(src_mm)
            dst = memoryview(bytearray(CALIBRATION_CHUNK))
            # warm-up pass
            for off in range(0, CALIBRATION_BYTES, CALIBRATION_CHUNK):
                dst[:] = src[off:off + CALIBRATION_CHUNK]
            t0 = time.perf_counter()
            for off in range(0, CALIBRATION_BYTES, CALIBRATION_CHUNK):
                dst[:] = src[off:off + CALIBRATION_CHUNK]
            elapsed = time.perf_counter() - t0
            src.release()
            dst.release()
        finally:
            src_mm.close()
        _calibrated_bandwidth = CALIBRATION_BYTES / max(elapsed, 1e-9)
        return _calibrated_bandwidth


def precise_wait_until(deadline: float) -> None:
    """Block until time.perf_counter() >= deadline (sleep, then spin)."""
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            return
        if remaining > _SLEEP_SLACK_S:
            time.sleep(remaining - _SLEEP_SLACK_S)
        # else: spin; loop re-checks the clock


class MemoryRegion:
    """One mapping of an arena: the owner's writable view or a remote view.

    Thread-safe for concurrent reads. Writes are only legal on the owner
    and must be serialized per byte range by the caller (the store hands
    out disjoint extents, which is all the serialization needed).
    """

    def __init__(
        self,
        node_id: int,
        kind: RegionKind,
        capacity: int,
        backing_path: str,
        mm: mmap.mmap,
        fileno: int,
        access_model: RemoteAccessModel | None = None,
        reference_bandwidth: float | None = None,
    ):
        self.node_id = node_id
        self.kind = kind
        self.capacity = capacity
        self.backing_path = backing_path
        self.access_model = access_model
        self._mm = mm
        self._fd = fileno
        self._reference_bandwidth = reference_bandwidth
        self._closed = False

    @property
    def writable(self) -> bool:
        return self.kind is RegionKind.LOCAL_OWNED

    def _check_bounds(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.capacity:
            raise OutOfBounds(
                f"range [{offset}, {offset + length}) outside arena of "
                f"{self.capacity} bytes"
            )

    def _penalty_deadline(self, start: float, length: int) -> float:
        model = self.access_model
        assert model is not None
        if self._reference_bandwidth is None:
            self._reference_bandwidth = measure_local_bandwidth()
        transfer = length / (self._reference_bandwidth * model.bandwidth_ratio)
        return start + model.per_access_latency_ns * 1e-9 + transfer

    def read_at(self, offset: int, length: int) -> bytes:
        """Read length bytes at offset. Remote views block for at least the
        modeled access latency plus transfer time before returning."""
        self._check_bounds(offset, length)
        if length == 0:
            return b""
        if self.kind is RegionKind.REMOTE_VIEW:
            start = time.perf_counter()
            data = self._mm[offset:offset + length]
            precise_wait_until(self._penalty_deadline(start, length))
            return data
        return self._mm[offset:offset + length]

    def read_into(self, offset: int, dest) -> int:
        """Copy len(dest) bytes at offset into a writable buffer.

        Allocation-free variant of read_at for throughput-sensitive readers;
        charges the same penalty per call. Returns the byte count.
        """
        length = len(dest)
        self._check_bounds(offset, length)
        if length == 0:
            return 0
        if self.kind is RegionKind.REMOTE_VIEW:
            start = time.perf_counter()
            dest[:] = memoryview(self._mm)[offset:offset + length]
            precise_wait_until(self._penalty_deadline(start, length))
            return length
        dest[:] = memoryview(self._mm)[offset:offset + length]
        return length

    def write_at(self, offset: int, data) -> None:
        """Write data at offset. Only the owner may write; writes are
        immediately visible to every view of the same backing file."""
        if self.kind is not RegionKind.LOCAL_OWNED:
            raise CoherencyViolation(
                f"write through remote view of node {self.node_id} arena"
            )
        length = len(data)
        self._check_bounds(offset, length)
        if length:
            self._mm[offset:offset + length] = data

    def view(self, offset: int, length: int) -> memoryview:
        """Zero-copy read view, for in-process consumers (checksums).

        Bypasses the penalty model; remote readers that should pay it must
        go through read_at/read_into. The view must be released before the
        region is closed.
        """
        self._check_bounds(offset, length)
        return memoryview(self._mm)[offset:offset + length]

    def flush(self) -> None:
        if self.kind is RegionKind.LOCAL_OWNED and not self._closed:
            self._mm.flush()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            if self.kind is RegionKind.LOCAL_OWNED:
                self._mm.flush()
        finally:
            self._mm.close()
            os.close(self._fd)

    def __enter__(self) -> "MemoryRegion":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return (
            f"MemoryRegion(node={self.node_id}, kind={self.kind.value}, "
            f"capacity={self.capacity}, path={self.backing_path!r})"
        )


def create_region(node_id: int, capacity: int, backing_path: str) -> MemoryRegion:
    """Create (or reopen) the locally owned arena at backing_path.

    A fresh file is zero-filled to exactly capacity bytes. An existing file
    keeps its contents and is resized to capacity, so a second mapping of
    the same path sees the first mapping's bytes and a daemon restart does
    not corrupt the file.
    """
    if capacity <= 0:
        raise InvalidCapacity(f"capacity must be positive, got {capacity}")
    try:
        fd = os.open(backing_path, os.O_RDWR | os.O_CREAT, 0o600)
    except OSError as exc:
        raise IoFailure(f"cannot create arena file {backing_path}: {exc}") from exc
    try:
        if os.fstat(fd).st_size != capacity:
            os.ftruncate(fd, capacity)
        mm = mmap.mmap(fd, capacity, access=mmap.ACCESS_WRITE)
    except (OSError, ValueError) as exc:
        os.close(fd)
        raise IoFailure(f"cannot map arena file {backing_path}: {exc}") from exc
    return MemoryRegion(
        node_id, RegionKind.LOCAL_OWNED, capacity, backing_path, mm, fd
    )


def attach_writable(node_id: int, backing_path: str) -> MemoryRegion:
    """Map an existing arena file read-write without resizing it.

    This is the client-side mapping of its own store's arena: the daemon
    owns the file geometry, the client only needs write access to fill
    the extents it created.
    """
    try:
        fd = os.open(backing_path, os.O_RDWR)
        capacity = os.fstat(fd).st_size
    except OSError as exc:
        raise IoFailure(f"cannot open arena file {backing_path}: {exc}") from exc
    try:
        mm = mmap.mmap(fd, capacity, access=mmap.ACCESS_WRITE)
    except (OSError, ValueError) as exc:
        os.close(fd)
        raise IoFailure(f"cannot map arena file {backing_path}: {exc}") from exc
    return MemoryRegion(
        node_id, RegionKind.LOCAL_OWNED, capacity, backing_path, mm, fd
    )


def attach_remote(
    node_id: int,
    backing_path: str,
    access_model: RemoteAccessModel,
    reference_bandwidth: float | None = None,
) -> MemoryRegion:
    """Attach a read-only view over another node's arena file.

    All reads through the returned region incur the access model's
    penalties. reference_bandwidth overrides the per-process calibration,
    which tests use to make timing deterministic.
    """
    try:
        fd = os.open(backing_path, os.O_RDONLY)
        capacity = os.fstat(fd).st_size
    except OSError as exc:
        raise IoFailure(f"cannot open remote arena {backing_path}: {exc}") from exc
    try:
        mm = mmap.mmap(fd, capacity, access=mmap.ACCESS_READ)
    except (OSError, ValueError) as exc:
        os.close(fd)
        raise IoFailure(f"cannot map remote arena {backing_path}: {exc}") from exc
    if reference_bandwidth is None:
        # calibrate at attach time (cached per process) so the first
        # penalized read does not swallow the measurement cost
        reference_bandwidth = measure_local_bandwidth()
    return MemoryRegion(
        node_id,
        RegionKind.REMOTE_VIEW,
        capacity,
        backing_path,
        mm,
        fd,
        access_model=access_model,
        reference_bandwidth=reference_bandwidth,
    )
