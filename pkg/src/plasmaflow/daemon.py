"""Store daemon: arena, allocator, object table, and both listeners.

The process hosts a Unix-socket service for clients, a TCP peer service
for other stores, and a cooperative shutdown path. Each client connection
is handled serially on its own thread; a connection's outstanding
references are released when it disconnects, however it disconnects.
"""

from __future__ import annotations

import logging
import os
import signal
import socket
import socketserver
import threading
from collections import Counter

from . import ipc
from .allocator import Allocator
from .arena import MemoryRegion, RegionKind, attach_remote, create_region
from .config import DaemonConfig
from .errors import (
    AlreadySealed,
    BindFailure,
    ConnectionLost,
    NotReferenced,
    ObjectExists,
    ObjectNotFound,
    OutOfMemory,
    PeerUnreachable,
    ProtocolError,
)
from .peer import PeerClient, PeerServer
from .store import ObjectId, Store
from .wire import recv_frame, send_frame

log = logging.getLogger(__name__)

# Blocking gets are capped server-side; an adversarial timeout must not pin
# a service thread indefinitely.
MAX_GET_WAIT_MS = 300_000


class _ClientHandler(socketserver.BaseRequestHandler):
    """Services one client connection, one request at a time, in order."""

    def setup(self) -> None:
        self.daemon: StoreDaemon = self.server.daemon  # type: ignore[attr-defined]
        self.refs: Counter[ObjectId] = Counter()

    def _client_gone(self) -> bool:
        """True once the client closed its end (peeked without consuming)."""
        try:
            return self.request.recv(1, socket.MSG_PEEK | socket.MSG_DONTWAIT) == b""
        except (BlockingIOError, InterruptedError):
            return False
        except OSError:
            return True

    def handle(self) -> None:
        sock = self.request
        while True:
            try:
                msg_type, payload = recv_frame(sock)
            except ConnectionLost:
                return
            except ProtocolError as exc:
                log.info("client connection dropped: %s", exc)
                return
            except OSError:
                return
            try:
                request = ipc.decode_message(msg_type, payload)
                response = self._dispatch(request)
            except ProtocolError as exc:
                log.info("malformed client request (0x%02x): %s", msg_type, exc)
                return
            try:
                resp_type, resp_payload = ipc.encode_message(response)
                send_frame(sock, resp_type, resp_payload)
            except OSError:
                return

    def finish(self) -> None:
        # Crash containment: whatever references this connection still
        # holds are released, and nothing else is touched.
        store = self.daemon.store
        for object_id, count in self.refs.items():
            for _ in range(count):
                try:
                    store.release_object(object_id)
                except (ObjectNotFound, NotReferenced):
                    break

    def _dispatch(self, request) -> "ipc.Message":
        store = self.daemon.store
        if isinstance(request, ipc.HelloRequest):
            if request.protocol_version != ipc.PROTOCOL_VERSION:
                return ipc.HelloResponse(
                    status=ipc.Status.PROTOCOL_ERROR,
                    protocol_version=ipc.PROTOCOL_VERSION,
                    node_id=self.daemon.config.node_id,
                )
            return ipc.HelloResponse(
                status=ipc.Status.OK,
                protocol_version=ipc.PROTOCOL_VERSION,
                node_id=self.daemon.config.node_id,
                arenas=self.daemon.arena_specs(),
            )
        if isinstance(request, ipc.CreateRequest):
            if request.data_size <= 0 or request.metadata_size < 0:
                raise ProtocolError("create with non-positive data size")
            try:
                descriptor = store.create_object(
                    ObjectId(request.object_id),
                    request.data_size,
                    request.metadata_size,
                )
            except ObjectExists:
                return ipc.CreateResponse(ipc.Status.EXISTS)
            except OutOfMemory:
                return ipc.CreateResponse(ipc.Status.OUT_OF_MEMORY)
            except PeerUnreachable:
                return ipc.CreateResponse(ipc.Status.PEER_UNREACHABLE)
            self.refs[ObjectId(request.object_id)] += 1
            return ipc.CreateResponse(ipc.Status.OK, descriptor)
        if isinstance(request, ipc.SealRequest):
            try:
                checksum = store.seal_object(ObjectId(request.object_id))
            except ObjectNotFound:
                return ipc.SealResponse(ipc.Status.NOT_FOUND)
            except AlreadySealed:
                return ipc.SealResponse(ipc.Status.EXISTS)
            return ipc.SealResponse(ipc.Status.OK, checksum)
        if isinstance(request, ipc.GetRequest):
            descriptors = store.get_objects(
                [ObjectId(i) for i in request.object_ids],
                min(request.timeout_ms, MAX_GET_WAIT_MS),
                abort_check=self._client_gone,
            )
            items = []
            for raw_id, descriptor in zip(request.object_ids, descriptors):
                if descriptor is None:
                    items.append((ipc.Status.TIMEOUT, None))
                else:
                    if descriptor.node_id == self.daemon.config.node_id:
                        self.refs[ObjectId(raw_id)] += 1
                    items.append((ipc.Status.OK, descriptor))
            return ipc.GetResponse(tuple(items))
        if isinstance(request, ipc.ReleaseRequest):
            object_id = ObjectId(request.object_id)
            try:
                store.release_object(object_id)
            except ObjectNotFound:
                return ipc.ReleaseResponse(ipc.Status.NOT_FOUND)
            except NotReferenced:
                return ipc.ReleaseResponse(ipc.Status.PROTOCOL_ERROR)
            if self.refs[object_id] > 0:
                self.refs[object_id] -= 1
            return ipc.ReleaseResponse(ipc.Status.OK)
        raise ProtocolError(f"unexpected message {type(request).__name__}")


class _ClientServer(socketserver.ThreadingUnixStreamServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, daemon: "StoreDaemon", path: str):
        self.daemon = daemon
        try:
            super().__init__(path, _ClientHandler)
        except OSError as exc:
            raise BindFailure(f"cannot bind client socket {path}: {exc}") from exc

    def handle_error(self, request, client_address) -> None:
        log.warning("error on client connection", exc_info=True)


class StoreDaemon:
    """One node of the deployment, runnable in-process or as a process."""

    def __init__(self, config: DaemonConfig):
        self.config = config
        self.local_region: MemoryRegion = create_region(
            config.node_id, config.arena_capacity_bytes, config.arena_path
        )
        self.remote_regions: dict[int, MemoryRegion] = {}
        self.peer_clients: list[PeerClient] = []
        try:
            for peer in config.peers:
                # attach now so a bad peer arena path fails at startup
                self.remote_regions[peer.endpoint.node_id] = attach_remote(
                    peer.endpoint.node_id, peer.backing_path, peer.access_model
                )
                self.peer_clients.append(
                    PeerClient(peer.endpoint, peer.access_model)
                )
        except Exception:
            self._close_regions()
            raise
        self.allocator = Allocator(
            config.arena_capacity_bytes, coalesce=config.allocator_coalescing
        )
        self.store = Store(
            config.node_id, self.local_region, self.allocator, self.peer_clients
        )
        self._client_server: _ClientServer | None = None
        self._peer_server: PeerServer | None = None
        self._client_thread: threading.Thread | None = None
        self._started = False
        self._stopped = threading.Event()

    def arena_specs(self) -> tuple[ipc.ArenaSpec, ...]:
        specs = [ipc.ArenaSpec(
            node_id=self.config.node_id,
            kind=RegionKind.LOCAL_OWNED,
            backing_path=self.config.arena_path,
            capacity=self.config.arena_capacity_bytes,
        )]
        for peer in self.config.peers:
            specs.append(ipc.ArenaSpec(
                node_id=peer.endpoint.node_id,
                kind=RegionKind.REMOTE_VIEW,
                backing_path=peer.backing_path,
                capacity=self.remote_regions[peer.endpoint.node_id].capacity,
                access_model=peer.access_model,
            ))
        return tuple(specs)

    def start(self) -> None:
        """Bind both listeners and begin serving on background threads."""
        if self._started:
            raise RuntimeError("daemon already started")
        socket_path = self.config.client_socket_path
        if os.path.exists(socket_path):
            os.unlink(socket_path)
        self._client_server = _ClientServer(self, socket_path)
        if self.config.peer_listen is not None:
            host, port = self.config.peer_listen
            self._peer_server = PeerServer(
                host, port, self.store.lookup_batch, self.store.exists
            )
            self._peer_server.start()
        self._client_thread = threading.Thread(
            target=self._client_server.serve_forever,
            name=f"client-service-{self.config.node_id}",
            daemon=True,
        )
        self._client_thread.start()
        self._started = True
        log.info(
            "store node %d serving clients at %s%s",
            self.config.node_id,
            socket_path,
            f", peers at {self.config.peer_listen}" if self.config.peer_listen else "",
        )

    def stop(self) -> None:
        if not self._started or self._stopped.is_set():
            return
        self._stopped.set()
        if self._client_server is not None:
            self._client_server.shutdown()
            self._client_server.server_close()
            if self._client_thread is not None:
                self._client_thread.join(timeout=5)
        if self._peer_server is not None:
            self._peer_server.stop()
        for client in self.peer_clients:
            client.close()
        try:
            os.unlink(self.config.client_socket_path)
        except OSError:
            pass
        self._close_regions()
        log.info("store node %d stopped", self.config.node_id)

    def _close_regions(self) -> None:
        for region in self.remote_regions.values():
            try:
                region.close()
            except Exception:
                pass
        try:
            self.local_region.close()
        except Exception:
            pass

    def run_forever(self) -> None:
        """Start, then block until SIGTERM or SIGINT."""
        self.start()
        done = threading.Event()

        def _handle(signum, frame) -> None:
            log.info("signal %d received, shutting down", signum)
            done.set()

        previous = {}
        for signum in (signal.SIGTERM, signal.SIGINT):
            previous[signum] = signal.signal(signum, _handle)
        try:
            done.wait()
        finally:
            for signum, handler in previous.items():
                signal.signal(signum, handler)
            self.stop()

    def __enter__(self) -> "StoreDaemon":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
