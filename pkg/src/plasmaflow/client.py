"""Producer/consumer SDK over the store's Unix socket.

A session handshakes, maps every advertised arena (the store's own arena
read-write, each peer arena as a penalized read-only view), and then moves
only descriptors over the socket; object payloads are written and read
directly through the mappings. Sessions are single-threaded: one request
in flight at a time.
"""

from __future__ import annotations

import socket
import time
from collections import Counter
from dataclasses import dataclass

from . import ipc
from .arena import (
    MemoryRegion,
    RegionKind,
    RemoteAccessModel,
    attach_remote,
    attach_writable,
)
from .errors import (
    AlreadySealed,
    ConnectFailure,
    ConnectionLost,
    NotReferenced,
    ObjectExists,
    ObjectNotFound,
    OutOfMemory,
    PeerUnreachable,
    PlasmaFlowError,
    ProtocolError,
    VersionMismatch,
)
from .store import ObjectId
from .wire import recv_frame, send_frame


class ObjectView:
    """Read access to one sealed object through a mapped arena.

    Exposes no write path. Reads through a remote arena mapping incur the
    access-penalty model of the peer that owns it.
    """

    def __init__(self, object_id: ObjectId, descriptor: ipc.BufferDescriptor,
                 region: MemoryRegion):
        self.object_id = object_id
        self.descriptor = descriptor
        self._region = region

    @property
    def data_size(self) -> int:
        return self.descriptor.data_size

    @property
    def metadata_size(self) -> int:
        return self.descriptor.metadata_size

    @property
    def node_id(self) -> int:
        return self.descriptor.node_id

    def read_all(self) -> bytes:
        """Sequential full read of the object data."""
        return self._region.read_at(self.descriptor.offset, self.descriptor.data_size)

    def read_into(self, dest, offset: int = 0) -> int:
        """Copy len(dest) data bytes starting at offset into dest.

        Zero-allocation path for sequential chunked readers; each call is
        one penalized arena read.
        """
        if offset < 0 or offset + len(dest) > self.descriptor.data_size:
            raise ValueError(
                f"read [{offset}, {offset + len(dest)}) outside object data "
                f"of {self.descriptor.data_size} bytes"
            )
        return self._region.read_into(self.descriptor.offset + offset, dest)

    def read_metadata(self) -> bytes:
        return self._region.read_at(
            self.descriptor.offset + self.descriptor.data_size,
            self.descriptor.metadata_size,
        )


@dataclass(frozen=True)
class WritePhases:
    """Per-call phase durations recorded by create_and_write."""

    create_ns: int
    write_ns: int
    seal_ns: int


class ClientSession:
    """One connection to a store daemon. Not thread-safe."""

    def __init__(self, socket_path: str, connect_timeout: float = 5.0):
        self.socket_path = socket_path
        try:
            self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            self._sock.settimeout(connect_timeout)
            self._sock.connect(socket_path)
            self._sock.settimeout(None)
        except OSError as exc:
            raise ConnectFailure(f"cannot connect to store at {socket_path}: {exc}") from exc
        self._closed = False
        self.regions: dict[int, MemoryRegion] = {}
        self.open_references: Counter[ObjectId] = Counter()
        self._ref_nodes: dict[ObjectId, int] = {}
        self.seal_checksums: dict[ObjectId, int] = {}
        self.last_write_phases: WritePhases | None = None
        try:
            hello = self._request(ipc.HelloRequest(ipc.PROTOCOL_VERSION))
            if not isinstance(hello, ipc.HelloResponse):
                raise ProtocolError("handshake got a non-hello response")
            if hello.protocol_version != ipc.PROTOCOL_VERSION or hello.status != ipc.Status.OK:
                raise VersionMismatch(
                    f"store speaks protocol {hello.protocol_version}, "
                    f"client speaks {ipc.PROTOCOL_VERSION}"
                )
            self.store_node_id = hello.node_id
            for spec in hello.arenas:
                if spec.kind is RegionKind.LOCAL_OWNED:
                    self.regions[spec.node_id] = attach_writable(
                        spec.node_id, spec.backing_path
                    )
                else:
                    self.regions[spec.node_id] = attach_remote(
                        spec.node_id, spec.backing_path,
                        spec.access_model or RemoteAccessModel(),
                    )
        except Exception:
            self._teardown()
            raise

    # -- low-level ----------------------------------------------------------

    def _request(self, message: ipc.Message) -> ipc.Message:
        if self._closed:
            raise ConnectionLost("session is closed")
        msg_type, payload = ipc.encode_message(message)
        try:
            send_frame(self._sock, msg_type, payload)
            resp_type, resp_payload = recv_frame(self._sock)
        except (OSError, ConnectionLost) as exc:
            self._closed = True
            raise ConnectionLost(f"store connection lost: {exc}") from exc
        return ipc.decode_message(resp_type, resp_payload)

    def _region_for(self, descriptor: ipc.BufferDescriptor) -> MemoryRegion:
        try:
            return self.regions[descriptor.node_id]
        except KeyError:
            raise ProtocolError(
                f"store returned a descriptor for unmapped node {descriptor.node_id}"
            ) from None

    # -- operations ----------------------------------------------------------

    def create_and_write(self, object_id: ObjectId, data: bytes,
                         metadata: bytes = b"") -> None:
        """Create, write, and seal one object (three timed phases)."""
        object_id = ObjectId(object_id)
        t0 = time.perf_counter_ns()
        response = self._request(
            ipc.CreateRequest(bytes(object_id), len(data), len(metadata))
        )
        if not isinstance(response, ipc.CreateResponse):
            raise ProtocolError("create got a mismatched response type")
        _raise_for_status(response.status, object_id)
        descriptor = response.descriptor
        assert descriptor is not None and descriptor.writable
        self.open_references[object_id] += 1
        self._ref_nodes[object_id] = descriptor.node_id
        t1 = time.perf_counter_ns()
        region = self._region_for(descriptor)
        region.write_at(descriptor.offset, data)
        if metadata:
            region.write_at(descriptor.offset + len(data), metadata)
        t2 = time.perf_counter_ns()
        seal = self._request(ipc.SealRequest(bytes(object_id)))
        if not isinstance(seal, ipc.SealResponse):
            raise ProtocolError("seal got a mismatched response type")
        _raise_for_status(seal.status, object_id, sealing=True)
        self.seal_checksums[object_id] = seal.checksum
        t3 = time.perf_counter_ns()
        self.last_write_phases = WritePhases(t1 - t0, t2 - t1, t3 - t2)

    def get(self, object_ids: list[ObjectId], timeout_ms: int) -> list[ObjectView | None]:
        """Resolve ids to readable views; None marks an id that stayed
        unsealed everywhere until the timeout."""
        if not object_ids:
            raise ValueError("get requires at least one id")
        ids = [ObjectId(i) for i in object_ids]
        response = self._request(
            ipc.GetRequest(tuple(bytes(i) for i in ids), timeout_ms)
        )
        if not isinstance(response, ipc.GetResponse) or len(response.items) != len(ids):
            raise ProtocolError("get got a mismatched response")
        views: list[ObjectView | None] = []
        for object_id, (status, descriptor) in zip(ids, response.items):
            if status == ipc.Status.OK and descriptor is not None:
                self.open_references[object_id] += 1
                self._ref_nodes[object_id] = descriptor.node_id
                views.append(ObjectView(object_id, descriptor, self._region_for(descriptor)))
            else:
                views.append(None)
        return views

    def release(self, object_id: ObjectId) -> None:
        """Drop one reference to an object previously obtained here.

        Only objects living on this session's own store are reference
        counted there; for remote descriptors the release is local
        bookkeeping (the owning store never knew about this reader).
        """
        object_id = ObjectId(object_id)
        if self.open_references[object_id] <= 0:
            raise NotReferenced(f"{object_id!r} is not held by this session")
        if self._ref_nodes.get(object_id) == self.store_node_id:
            response = self._request(ipc.ReleaseRequest(bytes(object_id)))
            if not isinstance(response, ipc.ReleaseResponse):
                raise ProtocolError("release got a mismatched response type")
            if response.status == ipc.Status.NOT_FOUND:
                raise ObjectNotFound(f"{object_id!r}")
            if response.status == ipc.Status.PROTOCOL_ERROR:
                raise NotReferenced(f"{object_id!r}")
        self.open_references[object_id] -= 1
        if self.open_references[object_id] == 0:
            del self.open_references[object_id]
            del self._ref_nodes[object_id]

    def release_all(self) -> None:
        for object_id in list(self.open_references):
            while self.open_references.get(object_id, 0) > 0:
                self.release(object_id)

    # -- lifecycle -----------------------------------------------------------

    def close(self) -> None:
        """Close the session; the store releases every reference this
        connection still holds (same path as a crash)."""
        if self._closed:
            return
        self._teardown()

    def _teardown(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass
        for region in self.regions.values():
            try:
                region.close()
            except Exception:
                pass
        self.regions.clear()
        self.open_references.clear()
        self._ref_nodes.clear()

    def __enter__(self) -> "ClientSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect(socket_path: str, connect_timeout: float = 5.0) -> ClientSession:
    """Connect to a store daemon and map its arenas."""
    return ClientSession(socket_path, connect_timeout)


def _raise_for_status(status: ipc.Status, object_id: ObjectId, sealing: bool = False) -> None:
    if status == ipc.Status.OK:
        return
    if status == ipc.Status.EXISTS:
        # the wire reuses EXISTS for a double seal; give it its own name here
        raise (AlreadySealed if sealing else ObjectExists)(f"{object_id!r}")
    if status == ipc.Status.NOT_FOUND:
        raise ObjectNotFound(f"{object_id!r}")
    if status == ipc.Status.OUT_OF_MEMORY:
        raise OutOfMemory(f"no space for {object_id!r}")
    if status == ipc.Status.PEER_UNREACHABLE:
        raise PeerUnreachable(
            f"id uniqueness for {object_id!r} could not be verified"
        )
    raise PlasmaFlowError(f"store rejected request for {object_id!r}: {status!r}")
