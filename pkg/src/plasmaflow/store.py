"""Store daemon core: object table, lifecycle, and eviction.

Objects are created writable, sealed exactly once (immutable from then
on), retrieved by descriptor, and reference-counted per connected client.
Sealed objects with zero references queue for eviction in least-recently-
released order; in-use objects are never evicted. Identifier uniqueness is
global: creation asks every configured peer whether the id exists anywhere
before reserving it, and refuses creation when a peer cannot be reached.

One lock guards the table and the allocator together, contended by the
client-servicing threads and the peer lookup service. Payload I/O (the
seal checksum pass) happens outside the lock; blocking gets wait on a
condition variable, never holding the lock while waiting or while calling
out to peers.
"""

from __future__ import annotations

import enum
import logging
import os
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

import xxhash

from .allocator import Allocator
from .arena import MemoryRegion
from .errors import (
    AlreadySealed,
    NotReferenced,
    ObjectExists,
    ObjectNotFound,
    OutOfMemory,
    PeerUnreachable,
)
from .ipc import BufferDescriptor
from .peer import NOT_FOUND, LookupResponse, PeerClient

log = logging.getLogger(__name__)

ID_SIZE = 20

# Re-polling cadence for blocking gets that wait on objects not yet sealed
# anywhere: local table checks ride the condition variable, peers are asked
# again at most every _PEER_POLL_S.
_PEER_POLL_S = 0.1
_LOCAL_WAIT_SLICE_S = 0.02


class ObjectId(bytes):
    """20-byte opaque object identifier; text form is 40 lowercase hex."""

    __slots__ = ()

    def __new__(cls, raw: bytes) -> "ObjectId":
        if len(raw) != ID_SIZE:
            raise ValueError(f"object id must be {ID_SIZE} bytes, got {len(raw)}")
        return super().__new__(cls, raw)

    @classmethod
    def from_hex(cls, text: str) -> "ObjectId":
        return cls(bytes.fromhex(text))

    @classmethod
    def random(cls) -> "ObjectId":
        return cls(os.urandom(ID_SIZE))

    def __repr__(self) -> str:
        return f"ObjectId({self.hex()})"


def digest64(buf) -> int:
    """64-bit non-cryptographic payload digest (xxh3).

    An audit tool for detecting post-seal mutation, not a security boundary.
    """
    return xxhash.xxh3_64_intdigest(buf)


class Hasher64:
    """Streaming digest64 for chunked readers; matches digest64 exactly."""

    __slots__ = ("_state",)

    def __init__(self):
        self._state = xxhash.xxh3_64()

    def update(self, chunk) -> None:
        self._state.update(chunk)

    @property
    def value(self) -> int:
        return self._state.intdigest()


class ObjectState(enum.Enum):
    CREATED = "created"
    SEALED = "sealed"


class Presence(enum.Enum):
    ABSENT = "absent"
    CREATED = "created"
    SEALED = "sealed"


@dataclass
class ObjectEntry:
    object_id: ObjectId
    offset: int
    data_size: int
    metadata_size: int
    state: ObjectState = ObjectState.CREATED
    ref_count: int = 1
    last_release: float = 0.0
    seal_checksum: int = 0

    @property
    def total_size(self) -> int:
        return self.data_size + self.metadata_size


@dataclass
class StoreStats:
    objects: int = 0
    sealed: int = 0
    evictable: int = 0
    evictions: int = 0
    bytes_in_use: int = 0
    peer_lookups: int = 0
    refs_outstanding: int = 0


class Store:
    """One daemon's object table over its local arena."""

    def __init__(
        self,
        node_id: int,
        region: MemoryRegion,
        allocator: Allocator,
        peers: list[PeerClient] | None = None,
    ):
        if not region.writable:
            raise ValueError("the store must own a writable local arena")
        self.node_id = node_id
        self.region = region
        self.allocator = allocator
        self.peers = list(peers or [])
        self._lock = threading.Lock()
        self._sealed = threading.Condition(self._lock)
        self._entries: dict[ObjectId, ObjectEntry] = {}
        # sealed zero-reference entries, least recently released first
        self._eviction_order: "OrderedDict[ObjectId, None]" = OrderedDict()
        self._evictions = 0
        self._peer_lookups = 0

    # -- creation / sealing ------------------------------------------------

    def create_object(
        self, object_id: ObjectId, data_size: int, metadata_size: int = 0
    ) -> BufferDescriptor:
        """Reserve the id system-wide and allocate its extent.

        The id must be absent locally and on every configured peer; if a
        peer cannot be reached the creation is refused rather than risking
        a duplicate (fail-safe). Returns a writable descriptor with the
        creator holding one reference.
        """
        object_id = ObjectId(object_id)
        if data_size <= 0:
            raise ValueError(f"data_size must be positive, got {data_size}")
        if metadata_size < 0:
            raise ValueError(f"metadata_size must be >= 0, got {metadata_size}")
        with self._lock:
            if object_id in self._entries:
                raise ObjectExists(f"{object_id!r} already present on this store")
        # Peer uniqueness checks happen outside the lock: the peer being
        # asked needs its own table lock, and it may be asking us back.
        for peer in self.peers:
            if peer.remote_exists(object_id):
                raise ObjectExists(
                    f"{object_id!r} already present on peer node {peer.node_id}"
                )
        with self._lock:
            if object_id in self._entries:
                raise ObjectExists(f"{object_id!r} already present on this store")
            offset = self._allocate_locked(data_size + metadata_size)
            self._entries[object_id] = ObjectEntry(
                object_id=object_id,
                offset=offset,
                data_size=data_size,
                metadata_size=metadata_size,
            )
        return BufferDescriptor(
            node_id=self.node_id,
            offset=offset,
            data_size=data_size,
            metadata_size=metadata_size,
            writable=True,
        )

    def seal_object(self, object_id: ObjectId) -> int:
        """Make the object immutable and visible to peers; returns the
        checksum recorded over its payload at seal time."""
        with self._lock:
            entry = self._entries.get(object_id)
            if entry is None:
                raise ObjectNotFound(f"{ObjectId(object_id)!r}")
            if entry.state is ObjectState.SEALED:
                raise AlreadySealed(f"{ObjectId(object_id)!r}")
            offset, total = entry.offset, entry.total_size
        # Checksum outside the lock: the creator has finished writing (it
        # is the only writer), and holding the lock across a payload pass
        # would stall every other request.
        view = self.region.view(offset, total)
        try:
            checksum = digest64(view)
        finally:
            view.release()
        with self._sealed:
            entry = self._entries.get(object_id)
            if entry is None:
                raise ObjectNotFound(f"{ObjectId(object_id)!r}")
            if entry.state is ObjectState.SEALED:
                raise AlreadySealed(f"{ObjectId(object_id)!r}")
            entry.state = ObjectState.SEALED
            entry.seal_checksum = checksum
            self._sealed.notify_all()
        return checksum

    # -- retrieval ---------------------------------------------------------

    def get_objects(
        self,
        object_ids: list[ObjectId],
        timeout_ms: int,
        abort_check=None,
    ) -> list[BufferDescriptor | None]:
        """Resolve each id to a descriptor, waiting up to the timeout.

        Locally sealed objects resolve to local descriptors and take a
        reference. Objects sealed on a peer resolve to read-only remote
        descriptors (no local reference; cross-store usage is not
        tracked). Ids still unsealed everywhere when the timeout elapses
        come back as None. abort_check, polled between wait slices, lets
        the caller cut a blocking get short (a client that hung up should
        not pin a service thread for the full timeout).
        """
        if not object_ids:
            raise ValueError("get_objects requires at least one id")
        deadline = time.monotonic() + timeout_ms / 1000.0
        results: list[BufferDescriptor | None] = [None] * len(object_ids)
        pending = {i: ObjectId(oid) for i, oid in enumerate(object_ids)}

        with self._lock:
            self._resolve_local_locked(pending, results)
        next_peer_poll = 0.0
        while pending:
            now = time.monotonic()
            if self.peers and now >= next_peer_poll:
                self._resolve_remote(pending, results)
                next_peer_poll = time.monotonic() + _PEER_POLL_S
                if not pending:
                    break
                now = time.monotonic()
            if now >= deadline:
                break
            if abort_check is not None and abort_check():
                break
            with self._sealed:
                self._sealed.wait(min(deadline - now, _LOCAL_WAIT_SLICE_S))
                self._resolve_local_locked(pending, results)
        return results

    def _resolve_local_locked(self, pending: dict, results: list) -> None:
        for i in list(pending):
            entry = self._entries.get(pending[i])
            if entry is not None and entry.state is ObjectState.SEALED:
                self._add_ref_locked(entry)
                results[i] = BufferDescriptor(
                    node_id=self.node_id,
                    offset=entry.offset,
                    data_size=entry.data_size,
                    metadata_size=entry.metadata_size,
                    writable=False,
                )
                del pending[i]

    def _resolve_remote(self, pending: dict, results: list) -> None:
        """Ask each peer about the still-missing ids (one batched round
        trip per peer, issued without the table lock)."""
        for peer in self.peers:
            if not pending:
                return
            indices = list(pending)
            ids = [pending[i] for i in indices]
            try:
                responses = peer.batch_lookup(ids)
            except PeerUnreachable as exc:
                log.warning(
                    "peer node %d unreachable during get, resolving locally only: %s",
                    peer.node_id, exc,
                )
                continue
            self._peer_lookups += 1
            for i, resp in zip(indices, responses):
                if resp.found and resp.sealed:
                    results[i] = BufferDescriptor(
                        node_id=peer.node_id,
                        offset=resp.offset,
                        data_size=resp.data_size,
                        metadata_size=resp.metadata_size,
                        writable=False,
                    )
                    del pending[i]

    # -- reference counting / eviction --------------------------------------

    def _add_ref_locked(self, entry: ObjectEntry) -> None:
        entry.ref_count += 1
        if entry.ref_count == 1:
            self._eviction_order.pop(entry.object_id, None)

    def release_object(self, object_id: ObjectId) -> None:
        """Drop one reference; at zero a sealed object becomes evictable
        and an unsealed one is aborted (its creator is gone)."""
        with self._lock:
            entry = self._entries.get(object_id)
            if entry is None:
                raise ObjectNotFound(f"{ObjectId(object_id)!r}")
            if entry.ref_count <= 0:
                raise NotReferenced(f"{ObjectId(object_id)!r} has no outstanding refs")
            entry.ref_count -= 1
            if entry.ref_count > 0:
                return
            if entry.state is ObjectState.SEALED:
                entry.last_release = time.monotonic()
                self._eviction_order[entry.object_id] = None
            else:
                # a CREATED object with no referents can never be sealed
                self._drop_entry_locked(entry)

    def evict_until(self, bytes_needed: int) -> int:
        """Evict least-recently-released idle objects until bytes_needed is
        coverable or nothing evictable remains; returns bytes freed."""
        with self._lock:
            return self._evict_until_locked(bytes_needed)

    def _evict_until_locked(self, bytes_needed: int) -> int:
        freed = 0
        while self._eviction_order and not self.allocator.would_fit(bytes_needed):
            object_id, _ = self._eviction_order.popitem(last=False)
            entry = self._entries[object_id]
            assert entry.ref_count == 0, "evicting an in-use object"
            assert entry.state is ObjectState.SEALED, "evicting an unsealed object"
            freed += self.allocator.allocation_size(entry.offset)
            self.allocator.deallocate(entry.offset)
            del self._entries[object_id]
            self._evictions += 1
        return freed

    def _drop_entry_locked(self, entry: ObjectEntry) -> None:
        self.allocator.deallocate(entry.offset)
        self._eviction_order.pop(entry.object_id, None)
        del self._entries[entry.object_id]

    def _allocate_locked(self, size: int) -> int:
        try:
            return self.allocator.allocate(size)
        except OutOfMemory:
            self._evict_until_locked(size)
            return self.allocator.allocate(size)

    # -- queries -------------------------------------------------------------

    def contains(self, object_id: ObjectId) -> Presence:
        with self._lock:
            entry = self._entries.get(object_id)
            if entry is None:
                return Presence.ABSENT
            if entry.state is ObjectState.CREATED:
                return Presence.CREATED
            return Presence.SEALED

    def exists(self, object_id: bytes) -> bool:
        """Peer uniqueness query: any state counts, CREATED included."""
        with self._lock:
            return ObjectId(object_id) in self._entries

    def lookup_batch(self, object_ids: list[bytes]) -> list[LookupResponse]:
        """Peer lookup service: one consistent table snapshot per batch.

        Unsealed objects report not-found; availability starts at seal.
        """
        out = []
        with self._lock:
            for raw in object_ids:
                entry = self._entries.get(ObjectId(raw))
                if entry is None or entry.state is not ObjectState.SEALED:
                    out.append(NOT_FOUND)
                else:
                    out.append(LookupResponse(
                        found=True,
                        sealed=True,
                        offset=entry.offset,
                        data_size=entry.data_size,
                        metadata_size=entry.metadata_size,
                    ))
        return out

    # -- observability -------------------------------------------------------

    def refcounts(self) -> dict[ObjectId, int]:
        with self._lock:
            return {oid: e.ref_count for oid, e in self._entries.items()}

    def entry_snapshot(self, object_id: ObjectId) -> ObjectEntry | None:
        with self._lock:
            entry = self._entries.get(object_id)
            if entry is None:
                return None
            return ObjectEntry(
                object_id=entry.object_id,
                offset=entry.offset,
                data_size=entry.data_size,
                metadata_size=entry.metadata_size,
                state=entry.state,
                ref_count=entry.ref_count,
                last_release=entry.last_release,
                seal_checksum=entry.seal_checksum,
            )

    def stats(self) -> StoreStats:
        with self._lock:
            sealed = sum(
                1 for e in self._entries.values()
                if e.state is ObjectState.SEALED
            )
            return StoreStats(
                objects=len(self._entries),
                sealed=sealed,
                evictable=len(self._eviction_order),
                evictions=self._evictions,
                bytes_in_use=self.allocator.bytes_in_use,
                peer_lookups=self._peer_lookups,
                refs_outstanding=sum(e.ref_count for e in self._entries.values()),
            )

    def audit_checksums(self) -> list[ObjectId]:
        """Recompute every sealed object's digest; returns ids whose bytes
        no longer match the value recorded at seal time."""
        with self._lock:
            sealed = [
                (e.object_id, e.offset, e.total_size, e.seal_checksum)
                for e in self._entries.values()
                if e.state is ObjectState.SEALED
            ]
        violations = []
        for object_id, offset, total, recorded in sealed:
            view = self.region.view(offset, total)
            try:
                if digest64(view) != recorded:
                    violations.append(object_id)
            finally:
                view.release()
        return violations
