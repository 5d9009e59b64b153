"""Client-to-store message algebra and its binary codec.

Payloads never travel over the socket, only descriptors do: a client
resolves a BufferDescriptor against its own arena mappings and reads or
writes the object bytes there. decode_message(encode_message(m)) is the
identity over every message type; the decoder rejects malformed payloads
with ProtocolError and never crashes on garbage.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .arena import RegionKind, RemoteAccessModel
from .errors import ProtocolError

PROTOCOL_VERSION = 1

MSG_CREATE_REQ = 0x10
MSG_CREATE_RESP = 0x11
MSG_SEAL_REQ = 0x12
MSG_SEAL_RESP = 0x13
MSG_GET_REQ = 0x14
MSG_GET_RESP = 0x15
MSG_RELEASE_REQ = 0x16
MSG_RELEASE_RESP = 0x17
MSG_HELLO_REQ = 0x18
MSG_HELLO_RESP = 0x19

ID_SIZE = 20


class Status(enum.IntEnum):
    OK = 0
    NOT_FOUND = 1
    EXISTS = 2
    OUT_OF_MEMORY = 3
    TIMEOUT = 4
    PROTOCOL_ERROR = 5
    PEER_UNREACHABLE = 6


_DESCRIPTOR = struct.Struct("<IQQQB")  # node_id, offset, data_size, metadata_size, writable
_CREATE_REQ = struct.Struct("<20sQQ")
_SEAL_RESP = struct.Struct("<BQ")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_ACCESS_MODEL = struct.Struct("<QdQ")


@dataclass(frozen=True)
class BufferDescriptor:
    """Where an object's bytes live: (arena node, offset, sizes).

    writable is true only for the creator of a not-yet-sealed object on the
    store's own node; remote descriptors are never writable.
    """

    node_id: int
    offset: int
    data_size: int
    metadata_size: int
    writable: bool = False

    @property
    def total_size(self) -> int:
        return self.data_size + self.metadata_size


@dataclass(frozen=True)
class ArenaSpec:
    """One arena advertised in the handshake."""

    node_id: int
    kind: RegionKind
    backing_path: str
    capacity: int
    access_model: RemoteAccessModel | None = None


@dataclass(frozen=True)
class CreateRequest:
    object_id: bytes
    data_size: int
    metadata_size: int


@dataclass(frozen=True)
class CreateResponse:
    status: Status
    descriptor: BufferDescriptor | None = None


@dataclass(frozen=True)
class SealRequest:
    object_id: bytes


@dataclass(frozen=True)
class SealResponse:
    status: Status
    checksum: int = 0


@dataclass(frozen=True)
class GetRequest:
    object_ids: tuple[bytes, ...]
    timeout_ms: int


@dataclass(frozen=True)
class GetResponse:
    # positionally aligned with the request ids
    items: tuple[tuple[Status, BufferDescriptor | None], ...]


@dataclass(frozen=True)
class ReleaseRequest:
    object_id: bytes


@dataclass(frozen=True)
class ReleaseResponse:
    status: Status


@dataclass(frozen=True)
class HelloRequest:
    protocol_version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class HelloResponse:
    status: Status
    protocol_version: int = PROTOCOL_VERSION
    node_id: int = 0
    arenas: tuple[ArenaSpec, ...] = field(default=())


Message = (
    CreateRequest | CreateResponse | SealRequest | SealResponse
    | GetRequest | GetResponse | ReleaseRequest | ReleaseResponse
    | HelloRequest | HelloResponse
)

_ZERO_DESCRIPTOR = _DESCRIPTOR.pack(0, 0, 0, 0, 0)


def _pack_descriptor(d: BufferDescriptor | None) -> bytes:
    if d is None:
        return _ZERO_DESCRIPTOR
    return _DESCRIPTOR.pack(
        d.node_id, d.offset, d.data_size, d.metadata_size, 1 if d.writable else 0
    )


def _unpack_descriptor(buf: bytes, present: bool) -> BufferDescriptor | None:
    node_id, offset, data_size, metadata_size, writable = _DESCRIPTOR.unpack(buf)
    if not present:
        return None
    return BufferDescriptor(node_id, offset, data_size, metadata_size, bool(writable))


def _check_id(object_id: bytes) -> bytes:
    if len(object_id) != ID_SIZE:
        raise ProtocolError(f"object id must be {ID_SIZE} bytes, got {len(object_id)}")
    return bytes(object_id)


def _status(raw: int) -> Status:
    try:
        return Status(raw)
    except ValueError:
        raise ProtocolError(f"unknown status byte {raw}") from None


def encode_message(msg: Message) -> tuple[int, bytes]:
    """Return (frame type, payload) for any protocol message."""
    if isinstance(msg, CreateRequest):
        return MSG_CREATE_REQ, _CREATE_REQ.pack(
            _check_id(msg.object_id), msg.data_size, msg.metadata_size
        )
    if isinstance(msg, CreateResponse):
        return MSG_CREATE_RESP, bytes([msg.status]) + _pack_descriptor(msg.descriptor)
    if isinstance(msg, SealRequest):
        return MSG_SEAL_REQ, _check_id(msg.object_id)
    if isinstance(msg, SealResponse):
        return MSG_SEAL_RESP, _SEAL_RESP.pack(msg.status, msg.checksum)
    if isinstance(msg, GetRequest):
        if not msg.object_ids:
            raise ProtocolError("GET request must carry at least one id")
        parts = [_U32.pack(len(msg.object_ids))]
        parts.extend(_check_id(i) for i in msg.object_ids)
        parts.append(_U64.pack(msg.timeout_ms))
        return MSG_GET_REQ, b"".join(parts)
    if isinstance(msg, GetResponse):
        parts = []
        for status, descriptor in msg.items:
            parts.append(bytes([status]))
            parts.append(_pack_descriptor(descriptor))
        return MSG_GET_RESP, b"".join(parts)
    if isinstance(msg, ReleaseRequest):
        return MSG_RELEASE_REQ, _check_id(msg.object_id)
    if isinstance(msg, ReleaseResponse):
        return MSG_RELEASE_RESP, bytes([msg.status])
    if isinstance(msg, HelloRequest):
        return MSG_HELLO_REQ, _U32.pack(msg.protocol_version)
    if isinstance(msg, HelloResponse):
        parts = [
            bytes([msg.status]),
            _U32.pack(msg.protocol_version),
            _U32.pack(msg.node_id),
            struct.pack("<H", len(msg.arenas)),
        ]
        for spec in msg.arenas:
            path = spec.backing_path.encode()
            parts.append(_U32.pack(spec.node_id))
            parts.append(bytes([0 if spec.kind is RegionKind.LOCAL_OWNED else 1]))
            parts.append(_U64.pack(spec.capacity))
            parts.append(struct.pack("<H", len(path)))
            parts.append(path)
            if spec.kind is RegionKind.REMOTE_VIEW:
                model = spec.access_model or RemoteAccessModel()
                parts.append(_ACCESS_MODEL.pack(
                    model.per_access_latency_ns,
                    model.bandwidth_ratio,
                    model.peer_rpc_latency_ns,
                ))
        return MSG_HELLO_RESP, b"".join(parts)
    raise TypeError(f"not a protocol message: {msg!r}")


class _Reader:
    """Cursor over a payload; every shortfall becomes ProtocolError."""

    def __init__(self, payload: bytes):
        self.buf = payload
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ProtocolError("truncated payload")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise ProtocolError(
                f"{len(self.buf) - self.pos} trailing bytes in payload"
            )


def decode_message(msg_type: int, payload: bytes) -> Message:
    """Inverse of encode_message; raises ProtocolError on malformed input."""
    r = _Reader(payload)
    if msg_type == MSG_CREATE_REQ:
        object_id, data_size, metadata_size = _CREATE_REQ.unpack(
            r.take(_CREATE_REQ.size)
        )
        r.done()
        return CreateRequest(object_id, data_size, metadata_size)
    if msg_type == MSG_CREATE_RESP:
        status = _status(r.u8())
        descriptor = _unpack_descriptor(r.take(_DESCRIPTOR.size), status == Status.OK)
        r.done()
        return CreateResponse(status, descriptor)
    if msg_type == MSG_SEAL_REQ:
        object_id = _check_id(r.take(ID_SIZE))
        r.done()
        return SealRequest(object_id)
    if msg_type == MSG_SEAL_RESP:
        status, checksum = _SEAL_RESP.unpack(r.take(_SEAL_RESP.size))
        r.done()
        return SealResponse(_status(status), checksum)
    if msg_type == MSG_GET_REQ:
        count = r.u32()
        if count == 0:
            raise ProtocolError("GET request with zero ids")
        if count * ID_SIZE > len(payload):
            raise ProtocolError("GET request id count exceeds payload")
        ids = tuple(r.take(ID_SIZE) for _ in range(count))
        timeout_ms = r.u64()
        r.done()
        return GetRequest(ids, timeout_ms)
    if msg_type == MSG_GET_RESP:
        record = 1 + _DESCRIPTOR.size
        if len(payload) % record:
            raise ProtocolError("GET response payload is not a whole record count")
        items = []
        for _ in range(len(payload) // record):
            status = _status(r.u8())
            descriptor = _unpack_descriptor(
                r.take(_DESCRIPTOR.size), status == Status.OK
            )
            items.append((status, descriptor))
        r.done()
        return GetResponse(tuple(items))
    if msg_type == MSG_RELEASE_REQ:
        object_id = _check_id(r.take(ID_SIZE))
        r.done()
        return ReleaseRequest(object_id)
    if msg_type == MSG_RELEASE_RESP:
        status = _status(r.u8())
        r.done()
        return ReleaseResponse(status)
    if msg_type == MSG_HELLO_REQ:
        version = r.u32()
        r.done()
        return HelloRequest(version)
    if msg_type == MSG_HELLO_RESP:
        status = _status(r.u8())
        version = r.u32()
        node_id = r.u32()
        count = r.u16()
        arenas = []
        for _ in range(count):
            spec_node = r.u32()
            kind_byte = r.u8()
            if kind_byte not in (0, 1):
                raise ProtocolError(f"unknown arena kind byte {kind_byte}")
            kind = RegionKind.LOCAL_OWNED if kind_byte == 0 else RegionKind.REMOTE_VIEW
            capacity = r.u64()
            try:
                path = r.take(r.u16()).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ProtocolError(f"arena path is not valid UTF-8: {exc}") from exc
            model = None
            if kind is RegionKind.REMOTE_VIEW:
                lat, ratio, rpc = _ACCESS_MODEL.unpack(r.take(_ACCESS_MODEL.size))
                try:
                    model = RemoteAccessModel(lat, ratio, rpc)
                except ValueError as exc:
                    raise ProtocolError(f"invalid access model: {exc}") from exc
            arenas.append(ArenaSpec(spec_node, kind, path, capacity, model))
        r.done()
        return HelloResponse(_status(status), version, node_id, tuple(arenas))
    raise ProtocolError(f"unknown message type 0x{msg_type:02x}")
