"""Shared fixtures: single daemons and two-node deployments on tmp paths."""

from __future__ import annotations

import os
import uuid

import pytest

from plasmaflow.arena import RemoteAccessModel, create_region
from plasmaflow.config import DaemonConfig, PeerConfig
from plasmaflow.daemon import StoreDaemon
from plasmaflow.peer import PeerEndpoint

from support import free_tcp_port

# Arena files live on tmpfs so payload reads and writes run at memory
# speed; socket paths stay short (AF_UNIX limit is 108 bytes).
def _scratch_dir() -> str:
    base = "/dev/shm" if os.path.isdir("/dev/shm") else "/tmp"
    path = os.path.join(base, f"pftest-{uuid.uuid4().hex[:10]}")
    os.makedirs(path)
    return path


@pytest.fixture
def scratch_dir():
    path = _scratch_dir()
    yield path
    for name in os.listdir(path):
        try:
            os.unlink(os.path.join(path, name))
        except OSError:
            pass
    os.rmdir(path)


# Tests that exercise the peer path use a small emulated RPC latency so the
# suite stays fast; acceptance runs use the real default model.
FAST_MODEL = RemoteAccessModel(
    per_access_latency_ns=0,
    bandwidth_ratio=0.885,
    peer_rpc_latency_ns=100_000,
)


def make_single_config(base: str, capacity: int = 8 * 1024 * 1024,
                       node_id: int = 0) -> DaemonConfig:
    return DaemonConfig(
        node_id=node_id,
        arena_path=os.path.join(base, f"node{node_id}.arena"),
        arena_capacity_bytes=capacity,
        client_socket_path=os.path.join(base, f"node{node_id}.sock"),
    )


def make_pair_configs(
    base: str,
    capacity_a: int = 32 * 1024 * 1024,
    capacity_b: int = 32 * 1024 * 1024,
    model: RemoteAccessModel = FAST_MODEL,
) -> tuple[DaemonConfig, DaemonConfig]:
    port_a, port_b = free_tcp_port(), free_tcp_port()
    arena_a = os.path.join(base, "node0.arena")
    arena_b = os.path.join(base, "node1.arena")
    cfg_a = DaemonConfig(
        node_id=0,
        arena_path=arena_a,
        arena_capacity_bytes=capacity_a,
        client_socket_path=os.path.join(base, "node0.sock"),
        peer_listen=("127.0.0.1", port_a),
        peers=(PeerConfig(
            endpoint=PeerEndpoint("127.0.0.1", port_b, 1),
            backing_path=arena_b,
            access_model=model,
        ),),
    )
    cfg_b = DaemonConfig(
        node_id=1,
        arena_path=arena_b,
        arena_capacity_bytes=capacity_b,
        client_socket_path=os.path.join(base, "node1.sock"),
        peer_listen=("127.0.0.1", port_b),
        peers=(PeerConfig(
            endpoint=PeerEndpoint("127.0.0.1", port_a, 0),
            backing_path=arena_a,
            access_model=model,
        ),),
    )
    return cfg_a, cfg_b


def start_pair(cfg_a: DaemonConfig, cfg_b: DaemonConfig) -> tuple[StoreDaemon, StoreDaemon]:
    """Pre-create both arena files (each daemon attaches the other's at
    startup), then bring both daemons up."""
    for cfg in (cfg_a, cfg_b):
        create_region(cfg.node_id, cfg.arena_capacity_bytes, cfg.arena_path).close()
    daemon_a = StoreDaemon(cfg_a)
    daemon_b = StoreDaemon(cfg_b)
    daemon_a.start()
    daemon_b.start()
    return daemon_a, daemon_b


@pytest.fixture
def single_daemon(scratch_dir):
    config = make_single_config(scratch_dir)
    daemon = StoreDaemon(config)
    daemon.start()
    yield daemon
    daemon.stop()


@pytest.fixture
def two_nodes(scratch_dir):
    cfg_a, cfg_b = make_pair_configs(scratch_dir)
    daemon_a, daemon_b = start_pair(cfg_a, cfg_b)
    yield daemon_a, daemon_b
    daemon_a.stop()
    daemon_b.stop()
