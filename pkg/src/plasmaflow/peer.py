"""Store-to-store lookup channel: synchronous unary calls over framed TCP.

Each daemon runs a PeerServer on a dedicated thread; outbound calls go
through a PeerClient holding one persistent connection per peer. Every
request frame is answered by exactly one response frame. The service is
strictly read-only against the serving store's table. The emulation adds
the peer's configured RPC latency to every round trip, standing in for
the network hop that a real deployment would pay.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass

from .arena import RemoteAccessModel, precise_wait_until
from .errors import BindFailure, PeerUnreachable, ProtocolError
from .wire import recv_frame, send_frame

log = logging.getLogger(__name__)

MSG_LOOKUP_REQ = 0x01
MSG_LOOKUP_RESP = 0x02
MSG_EXISTS_REQ = 0x03
MSG_EXISTS_RESP = 0x04

ID_SIZE = 20

_U32 = struct.Struct("<I")
_LOOKUP_RECORD = struct.Struct("<BQQQ")  # flags, offset, data_size, metadata_size
FLAG_FOUND = 0x01
FLAG_SEALED = 0x02


@dataclass(frozen=True)
class PeerEndpoint:
    host: str
    port: int
    node_id: int


@dataclass(frozen=True)
class LookupResponse:
    found: bool
    sealed: bool
    offset: int = 0
    data_size: int = 0
    metadata_size: int = 0


NOT_FOUND = LookupResponse(found=False, sealed=False)


def encode_lookup_request(ids: list[bytes]) -> bytes:
    parts = [_U32.pack(len(ids))]
    for object_id in ids:
        if len(object_id) != ID_SIZE:
            raise ProtocolError(f"object id must be {ID_SIZE} bytes")
        parts.append(bytes(object_id))
    return b"".join(parts)


def decode_lookup_request(payload: bytes) -> list[bytes]:
    if len(payload) < 4:
        raise ProtocolError("lookup request shorter than its count field")
    (count,) = _U32.unpack(payload[:4])
    if len(payload) != 4 + count * ID_SIZE:
        raise ProtocolError("lookup request length does not match id count")
    if count == 0:
        raise ProtocolError("lookup request with zero ids")
    return [payload[4 + i * ID_SIZE: 4 + (i + 1) * ID_SIZE] for i in range(count)]


def encode_lookup_response(responses: list[LookupResponse]) -> bytes:
    parts = []
    for resp in responses:
        flags = (FLAG_FOUND if resp.found else 0) | (FLAG_SEALED if resp.sealed else 0)
        parts.append(_LOOKUP_RECORD.pack(
            flags, resp.offset, resp.data_size, resp.metadata_size
        ))
    return b"".join(parts)


def decode_lookup_response(payload: bytes) -> list[LookupResponse]:
    record = _LOOKUP_RECORD.size
    if len(payload) % record:
        raise ProtocolError("lookup response is not a whole record count")
    out = []
    for i in range(0, len(payload), record):
        flags, offset, data_size, metadata_size = _LOOKUP_RECORD.unpack(
            payload[i:i + record]
        )
        if flags & ~(FLAG_FOUND | FLAG_SEALED):
            raise ProtocolError(f"unknown lookup flags 0x{flags:02x}")
        found = bool(flags & FLAG_FOUND)
        sealed = bool(flags & FLAG_SEALED)
        if not found:
            out.append(NOT_FOUND)
        else:
            out.append(LookupResponse(found, sealed, offset, data_size, metadata_size))
    return out


class PeerClient:
    """Outbound side of the peer channel, one per configured peer.

    Keeps a single persistent connection and retries exactly once on I/O
    failure before raising PeerUnreachable. Calls must never be issued
    while holding the store's table lock (the serving peer needs its own
    lock, and two stores call each other).
    """

    def __init__(
        self,
        endpoint: PeerEndpoint,
        access_model: RemoteAccessModel | None = None,
        connect_timeout: float = 5.0,
    ):
        self.endpoint = endpoint
        self.access_model = access_model or RemoteAccessModel()
        self._connect_timeout = connect_timeout
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    @property
    def node_id(self) -> int:
        return self.endpoint.node_id

    def _connect(self) -> socket.socket:
        sock = socket.create_connection(
            (self.endpoint.host, self.endpoint.port), timeout=self._connect_timeout
        )
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def _round_trip(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        with self._lock:
            last_error: Exception | None = None
            for attempt in range(2):
                try:
                    if self._sock is None:
                        self._sock = self._connect()
                    send_frame(self._sock, msg_type, payload)
                    return recv_frame(self._sock)
                except (OSError, ProtocolError, ConnectionError) as exc:
                    if isinstance(exc, ProtocolError):
                        self._drop()
                        raise
                    last_error = exc
                    self._drop()
            raise PeerUnreachable(
                f"peer node {self.endpoint.node_id} at "
                f"{self.endpoint.host}:{self.endpoint.port}: {last_error}"
            ) from last_error

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def _emulate_rpc_latency(self) -> None:
        latency_ns = self.access_model.peer_rpc_latency_ns
        if latency_ns:
            precise_wait_until(time.perf_counter() + latency_ns * 1e-9)

    def batch_lookup(self, ids: list[bytes]) -> list[LookupResponse]:
        """Look up many ids in one round trip, positionally aligned."""
        if not ids:
            raise ValueError("batch_lookup requires at least one id")
        msg_type, payload = self._round_trip(
            MSG_LOOKUP_REQ, encode_lookup_request(ids)
        )
        if msg_type != MSG_LOOKUP_RESP:
            self._drop()
            raise ProtocolError(f"expected LOOKUP_RESP, got 0x{msg_type:02x}")
        responses = decode_lookup_response(payload)
        if len(responses) != len(ids):
            self._drop()
            raise ProtocolError(
                f"lookup response count {len(responses)} != request count {len(ids)}"
            )
        self._emulate_rpc_latency()
        return responses

    def remote_lookup(self, object_id: bytes) -> LookupResponse:
        return self.batch_lookup([object_id])[0]

    def remote_exists(self, object_id: bytes) -> bool:
        """True iff the peer's table contains the id in any state."""
        if len(object_id) != ID_SIZE:
            raise ProtocolError(f"object id must be {ID_SIZE} bytes")
        msg_type, payload = self._round_trip(MSG_EXISTS_REQ, bytes(object_id))
        if msg_type != MSG_EXISTS_RESP or len(payload) != 1:
            self._drop()
            raise ProtocolError("malformed EXISTS response")
        self._emulate_rpc_latency()
        return payload[0] != 0

    def close(self) -> None:
        with self._lock:
            self._drop()


class _PeerRequestHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        server: PeerServer = self.server  # type: ignore[assignment]
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                msg_type, payload = recv_frame(sock)
            except Exception:
                return  # disconnect or garbage: drop the connection
            try:
                if msg_type == MSG_LOOKUP_REQ:
                    ids = decode_lookup_request(payload)
                    responses = server.lookup_handler(ids)
                    send_frame(sock, MSG_LOOKUP_RESP, encode_lookup_response(responses))
                elif msg_type == MSG_EXISTS_REQ:
                    if len(payload) != ID_SIZE:
                        raise ProtocolError("EXISTS request must be one 20-byte id")
                    present = server.exists_handler(payload)
                    send_frame(sock, MSG_EXISTS_RESP, bytes([1 if present else 0]))
                else:
                    raise ProtocolError(f"unknown peer message 0x{msg_type:02x}")
            except ProtocolError as exc:
                log.warning("peer connection dropped: %s", exc)
                return
            except OSError:
                return


class PeerServer(socketserver.ThreadingTCPServer):
    """Serves lookup/exists against a store's table until shut down.

    The handlers are injected callables that read the table under the
    store's mutual-exclusion domain; the server itself holds no state.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, host: str, port: int, lookup_handler, exists_handler):
        self.lookup_handler = lookup_handler
        self.exists_handler = exists_handler
        try:
            super().__init__((host, port), _PeerRequestHandler)
        except OSError as exc:
            raise BindFailure(f"cannot bind peer service to {host}:{port}: {exc}") from exc
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self.serve_forever, name="peer-service", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def handle_error(self, request, client_address) -> None:
        log.warning("error handling peer connection from %s", client_address)
