"""Daemon configuration: flat key=value text, one key per line.

Example::

    node_id = 0
    arena_path = /dev/shm/node0.arena
    arena_capacity_bytes = 268435456
    client_socket_path = /tmp/plasmaflow-node0.sock
    peer_listen = 127.0.0.1:7400
    # one peer block per remote node
    peer.1.host = 127.0.0.1
    peer.1.port = 7401
    peer.1.backing_path = /dev/shm/node1.arena
    peer.1.bandwidth_ratio = 0.885
    peer.1.peer_rpc_latency_ns = 2500000
    peer.1.per_access_latency_ns = 0
    allocator_coalescing = true
    log_level = INFO
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .arena import RemoteAccessModel
from .errors import ConfigError
from .peer import PeerEndpoint


@dataclass(frozen=True)
class PeerConfig:
    endpoint: PeerEndpoint
    backing_path: str
    access_model: RemoteAccessModel


@dataclass(frozen=True)
class DaemonConfig:
    node_id: int
    arena_path: str
    arena_capacity_bytes: int
    client_socket_path: str
    peer_listen: tuple[str, int] | None = None
    peers: tuple[PeerConfig, ...] = field(default=())
    allocator_coalescing: bool = True
    log_level: str = "INFO"

    def __post_init__(self) -> None:
        if self.arena_capacity_bytes <= 0:
            raise ConfigError("arena_capacity_bytes must be positive")
        peer_ids = [p.endpoint.node_id for p in self.peers]
        if len(set(peer_ids)) != len(peer_ids):
            raise ConfigError("peer node ids must be unique")
        if self.node_id in peer_ids:
            raise ConfigError(
                f"node_id {self.node_id} duplicated by a peer entry"
            )
        if self.peers and self.peer_listen is None:
            raise ConfigError("peer_listen is required when peers are configured")


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _parse_hostport(raw: str, key: str) -> tuple[str, int]:
    host, sep, port = raw.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"{key}: expected host:port, got {raw!r}")
    return host, _parse_int(port, key)


def parse_config(text: str) -> DaemonConfig:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key = key.strip()
        value = value.strip()
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value

    def take(key: str, required: bool = True, default: str | None = None) -> str | None:
        if key in pairs:
            return pairs.pop(key)
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default

    node_id = _parse_int(take("node_id"), "node_id")
    arena_path = take("arena_path")
    capacity = _parse_int(take("arena_capacity_bytes"), "arena_capacity_bytes")
    socket_path = take("client_socket_path")
    listen_raw = take("peer_listen", required=False)
    peer_listen = _parse_hostport(listen_raw, "peer_listen") if listen_raw else None
    coalescing = _parse_bool(
        take("allocator_coalescing", required=False, default="true"),
        "allocator_coalescing",
    )
    log_level = take("log_level", required=False, default="INFO")

    peer_fields: dict[int, dict[str, str]] = {}
    for key in list(pairs):
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "peer":
            peer_id = _parse_int(parts[1], key)
            peer_fields.setdefault(peer_id, {})[parts[2]] = pairs.pop(key)
    if pairs:
        raise ConfigError(f"unknown keys: {sorted(pairs)}")

    peers = []
    for peer_id in sorted(peer_fields):
        fields = peer_fields[peer_id]
        for required_key in ("host", "port", "backing_path"):
            if required_key not in fields:
                raise ConfigError(f"peer.{peer_id} is missing {required_key!r}")
        unknown = set(fields) - {
            "host", "port", "backing_path",
            "per_access_latency_ns", "bandwidth_ratio", "peer_rpc_latency_ns",
        }
        if unknown:
            raise ConfigError(f"peer.{peer_id} has unknown keys: {sorted(unknown)}")
        try:
            model = RemoteAccessModel(
                per_access_latency_ns=int(fields.get("per_access_latency_ns", "0")),
                bandwidth_ratio=float(fields.get("bandwidth_ratio", "0.885")),
                peer_rpc_latency_ns=int(fields.get("peer_rpc_latency_ns", "2500000")),
            )
        except ValueError as exc:
            raise ConfigError(f"peer.{peer_id}: {exc}") from exc
        peers.append(PeerConfig(
            endpoint=PeerEndpoint(
                host=fields["host"],
                port=_parse_int(fields["port"], f"peer.{peer_id}.port"),
                node_id=peer_id,
            ),
            backing_path=fields["backing_path"],
            access_model=model,
        ))
    return DaemonConfig(
        node_id=node_id,
        arena_path=arena_path,
        arena_capacity_bytes=capacity,
        client_socket_path=socket_path,
        peer_listen=peer_listen,
        peers=tuple(peers),
        allocator_coalescing=coalescing,
        log_level=log_level,
    )


def load_config(path: str) -> DaemonConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(config: DaemonConfig) -> str:
    """Render a DaemonConfig back to the flat key=value format."""
    lines = [
        f"node_id = {config.node_id}",
        f"arena_path = {config.arena_path}",
        f"arena_capacity_bytes = {config.arena_capacity_bytes}",
        f"client_socket_path = {config.client_socket_path}",
    ]
    if config.peer_listen:
        lines.append(f"peer_listen = {config.peer_listen[0]}:{config.peer_listen[1]}")
    for peer in config.peers:
        pid = peer.endpoint.node_id
        lines.append(f"peer.{pid}.host = {peer.endpoint.host}")
        lines.append(f"peer.{pid}.port = {peer.endpoint.port}")
        lines.append(f"peer.{pid}.backing_path = {peer.backing_path}")
        lines.append(
            f"peer.{pid}.per_access_latency_ns = {peer.access_model.per_access_latency_ns}"
        )
        lines.append(f"peer.{pid}.bandwidth_ratio = {peer.access_model.bandwidth_ratio}")
        lines.append(
            f"peer.{pid}.peer_rpc_latency_ns = {peer.access_model.peer_rpc_latency_ns}"
        )
    lines.append(f"allocator_coalescing = {'true' if config.allocator_coalescing else 'false'}")
    lines.append(f"log_level = {config.log_level}")
    return "\n".join(lines) + "\n"
