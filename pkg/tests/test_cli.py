"""Config parsing and the two CLI entry points."""

import os
import signal
import subprocess
import sys
import time

import pytest

from plasmaflow import cli
from plasmaflow.bench import load_records
from plasmaflow.client import connect
from plasmaflow.config import format_config, parse_config
from plasmaflow.errors import ConfigError
from plasmaflow.store import ObjectId

from conftest import make_pair_configs, start_pair


GOOD_CONFIG = """
# node zero
node_id = 0
arena_path = /dev/shm/pf-conf.arena
arena_capacity_bytes = 1048576
client_socket_path = /tmp/pf-conf.sock
peer_listen = 127.0.0.1:7411
peer.1.host = 127.0.0.1
peer.1.port = 7412
peer.1.backing_path = /dev/shm/pf-conf-peer.arena
peer.1.bandwidth_ratio = 0.5
peer.1.peer_rpc_latency_ns = 1000000
allocator_coalescing = false
log_level = DEBUG
"""


def test_parse_full_config():
    config = parse_config(GOOD_CONFIG)
    assert config.node_id == 0
    assert config.arena_capacity_bytes == 1 << 20
    assert config.peer_listen == ("127.0.0.1", 7411)
    assert len(config.peers) == 1
    peer = config.peers[0]
    assert (peer.endpoint.host, peer.endpoint.port, peer.endpoint.node_id) \
        == ("127.0.0.1", 7412, 1)
    assert peer.access_model.bandwidth_ratio == 0.5
    assert peer.access_model.per_access_latency_ns == 0  # default
    assert config.allocator_coalescing is False
    assert config.log_level == "DEBUG"


def test_config_format_roundtrip():
    config = parse_config(GOOD_CONFIG)
    assert parse_config(format_config(config)) == config


def test_missing_key_rejected():
    with pytest.raises(ConfigError):
        parse_config("node_id = 0\narena_path = /x\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_config(GOOD_CONFIG + "\nwat = 1\n")


def test_duplicate_node_id_refused():
    bad = GOOD_CONFIG.replace("peer.1.", "peer.0.")
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        parse_config(GOOD_CONFIG.replace("1048576", "lots"))
    with pytest.raises(ConfigError):
        parse_config(GOOD_CONFIG.replace("0.5", "1.5"))
    with pytest.raises(ConfigError):
        parse_config(GOOD_CONFIG.replace("127.0.0.1:7411", "7411"))


def test_bench_selection_parsing():
    assert cli._parse_bench_selection("all") == [1, 2, 3, 4, 5, 6]
    assert cli._parse_bench_selection("3") == [3]
    assert cli._parse_bench_selection("5,1,3") == [1, 3, 5]
    import argparse
    with pytest.raises(argparse.ArgumentTypeError):
        cli._parse_bench_selection("9")
    with pytest.raises(argparse.ArgumentTypeError):
        cli._parse_bench_selection("x")


def test_daemon_subprocess_serves_and_shuts_down(scratch_dir):
    config_path = os.path.join(scratch_dir, "node.conf")
    socket_path = os.path.join(scratch_dir, "node.sock")
    arena_path = os.path.join(scratch_dir, "node.arena")
    with open(config_path, "w") as handle:
        handle.write(
            f"node_id = 3\narena_path = {arena_path}\n"
            f"arena_capacity_bytes = 4194304\n"
            f"client_socket_path = {socket_path}\n"
        )
    proc = subprocess.Popen(
        [sys.executable, "-m", "plasmaflow.cli", "daemon", "--config", config_path],
    )
    try:
        deadline = time.time() + 10
        while time.time() < deadline and not os.path.exists(socket_path):
            time.sleep(0.05)
        with connect(socket_path) as session:
            assert session.store_node_id == 3
            session.create_and_write(ObjectId.random(), b"cli smoke")
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()


def test_daemon_command_bad_config_exits_nonzero(scratch_dir, capsys):
    config_path = os.path.join(scratch_dir, "broken.conf")
    with open(config_path, "w") as handle:
        handle.write("node_id = zero\n")
    assert cli.main(["daemon", "--config", config_path]) == 1
    assert "error" in capsys.readouterr().err


def test_bench_command_missing_daemon_exits_nonzero(scratch_dir, capsys):
    missing = os.path.join(scratch_dir, "nope.sock")
    code = cli.main([
        "bench", "--producer", missing, "--consumer-local", missing,
        "--consumer-remote", missing, "--out", os.path.join(scratch_dir, "r.csv"),
    ])
    assert code == 1


@pytest.mark.slow
def test_bench_command_end_to_end(scratch_dir, capsys):
    cfg_a, cfg_b = make_pair_configs(scratch_dir)
    daemon_a, daemon_b = start_pair(cfg_a, cfg_b)
    out_path = os.path.join(scratch_dir, "records.csv")
    try:
        code = cli.main([
            "bench",
            "--producer", cfg_a.client_socket_path,
            "--consumer-local", cfg_a.client_socket_path,
            "--consumer-remote", cfg_b.client_socket_path,
            "--bench", "1",
            "--reps", "2",
            "--seed", "9",
            "--format", "csv",
            "--out", out_path,
        ])
    finally:
        daemon_a.stop()
        daemon_b.stop()
    assert code == 0
    records = load_records("csv", out_path)
    assert len(records) == 2 * 2 * 3  # scenarios x reps x phases
    printed = capsys.readouterr().out
    assert "bench" in printed and "records written" in printed
