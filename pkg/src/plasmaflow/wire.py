"""Framed-stream transport shared by the peer and client protocols.

Every frame is [4-byte little-endian payload length][1-byte message type]
[payload]. Frames above 16 MiB of payload are rejected.
"""

from __future__ import annotations

import socket
import struct

from .errors import ConnectionLost, ProtocolError

MAX_FRAME_PAYLOAD = 16 * 1024 * 1024
_HEADER = struct.Struct("<IB")
HEADER_SIZE = _HEADER.size


def pack_frame(msg_type: int, payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME_PAYLOAD:
        raise ProtocolError(f"frame payload {len(payload)} exceeds 16 MiB limit")
    return _HEADER.pack(len(payload), msg_type) + payload


def send_frame(sock: socket.socket, msg_type: int, payload: bytes) -> None:
    sock.sendall(pack_frame(msg_type, payload))


def _recv_exact(sock: socket.socket, n: int, at_boundary: bool) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            if at_boundary and remaining == n:
                raise ConnectionLost("peer closed the connection")
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> tuple[int, bytes]:
    """Read one frame. Raises ConnectionLost on a clean close between
    frames, ProtocolError on truncation or an oversized declared length."""
    header = _recv_exact(sock, HEADER_SIZE, at_boundary=True)
    length, msg_type = _HEADER.unpack(header)
    if length > MAX_FRAME_PAYLOAD:
        raise ProtocolError(f"declared payload {length} exceeds 16 MiB limit")
    payload = _recv_exact(sock, length, at_boundary=False) if length else b""
    return msg_type, payload
