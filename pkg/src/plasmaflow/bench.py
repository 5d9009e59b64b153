"""Microbenchmark harness for the two-node deployment.

For each benchmark row, a producer client commits seeded-random objects to
one store; a consumer client (local to the producer's store, or attached
to the other store) then retrieves the buffers and reads them through. Per
repetition, three measurements are taken:

  CREATE_WRITE_SEAL  nanoseconds to create, write, and seal the whole batch
  RETRIEVAL          nanoseconds from issuing the get to holding every buffer
  READ               bytes/second reading every buffer sequentially, access
                     penalties included

Everything is single-threaded; scenarios run one after the other. Objects
are released after every repetition so the next repetition's allocations
recycle their space through the eviction path, keeping repetitions
independent. Every read byte is audited against the checksum the store
reported at seal time.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .client import ClientSession
from .errors import CapacityError, EmptySample, IoFailure, PlasmaFlowError
from .store import Hasher64, ObjectId

log = logging.getLogger(__name__)

# bench id -> (number of objects, object size in bytes); sizes are decimal kB
BENCH_MATRIX: dict[int, tuple[int, int]] = {
    1: (1000, 1_000),
    2: (500, 10_000),
    3: (200, 100_000),
    4: (100, 1_000_000),
    5: (50, 10_000_000),
    6: (10, 100_000_000),
}

DEFAULT_REPETITIONS = 100
GET_TIMEOUT_MS = 60_000
READ_CHUNK = 256 * 1024
# the producer arena must leave headroom above one repetition's footprint
CAPACITY_FACTOR = 1.2


class Scenario(enum.Enum):
    LOCAL = "local"
    REMOTE = "remote"


class Phase(enum.Enum):
    CREATE_WRITE_SEAL = "create_write_seal"
    RETRIEVAL = "retrieval"
    READ = "read"


_PHASE_UNIT = {
    Phase.CREATE_WRITE_SEAL: "ns",
    Phase.RETRIEVAL: "ns",
    Phase.READ: "bytes_per_second",
}


@dataclass(frozen=True)
class BenchmarkSpec:
    bench_id: int
    scenario: Scenario
    repetitions: int = DEFAULT_REPETITIONS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.bench_id not in BENCH_MATRIX:
            raise ValueError(f"bench_id must be 1..6, got {self.bench_id}")
        if self.repetitions <= 0:
            raise ValueError("repetitions must be positive")

    @property
    def num_objects(self) -> int:
        return BENCH_MATRIX[self.bench_id][0]

    @property
    def object_size(self) -> int:
        return BENCH_MATRIX[self.bench_id][1]

    @property
    def footprint(self) -> int:
        return self.num_objects * self.object_size


@dataclass(frozen=True)
class MeasurementRecord:
    bench_id: int
    scenario: Scenario
    repetition: int
    phase: Phase
    value: float
    unit: str


@dataclass
class RunReport:
    """Records plus everything that went wrong."""

    records: list[MeasurementRecord] = field(default_factory=list)
    aborted: list[tuple[int, str]] = field(default_factory=list)  # (repetition, reason)
    audit_violations: int = 0

    @property
    def ok(self) -> bool:
        return not self.aborted and self.audit_violations == 0


def generate_payloads(spec: BenchmarkSpec) -> list[bytes]:
    """Deterministic object payloads for one benchmark run.

    The same (seed, bench, scenario) always yields the same bytes; payloads
    are reused across repetitions since object content does not influence
    the measured path.
    """
    scenario_code = 0 if spec.scenario is Scenario.LOCAL else 1
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([spec.seed, spec.bench_id, scenario_code]))
    )
    return [rng.bytes(spec.object_size) for _ in range(spec.num_objects)]


def run_benchmark(
    spec: BenchmarkSpec,
    producer: ClientSession,
    consumer: ClientSession,
    payloads: list[bytes] | None = None,
) -> RunReport:
    """Run every repetition of one benchmark row against live daemons."""
    producer_capacity = producer.regions[producer.store_node_id].capacity
    if producer_capacity < CAPACITY_FACTOR * spec.footprint:
        raise CapacityError(
            f"bench {spec.bench_id} needs {CAPACITY_FACTOR:.1f} x "
            f"{spec.footprint} bytes, producer arena has {producer_capacity}"
        )
    if payloads is None:
        payloads = generate_payloads(spec)
    scratch = memoryview(bytearray(min(READ_CHUNK, spec.object_size)))
    report = RunReport()
    for repetition in range(spec.repetitions):
        try:
            report.records.extend(
                _run_repetition(spec, repetition, producer, consumer, payloads, report, scratch)
            )
        except PlasmaFlowError as exc:
            log.error("bench %d %s rep %d aborted: %s",
                      spec.bench_id, spec.scenario.value, repetition, exc)
            report.aborted.append((repetition, f"{type(exc).__name__}: {exc}"))
            _release_quietly(producer)
            _release_quietly(consumer)
    return report


def _run_repetition(
    spec: BenchmarkSpec,
    repetition: int,
    producer: ClientSession,
    consumer: ClientSession,
    payloads: list[bytes],
    report: RunReport,
    scratch: memoryview,
) -> list[MeasurementRecord]:
    ids = [ObjectId.random() for _ in range(spec.num_objects)]

    t0 = time.perf_counter_ns()
    for object_id, payload in zip(ids, payloads):
        producer.create_and_write(object_id, payload)
    create_ns = time.perf_counter_ns() - t0

    # the producer's references are dropped before the consumer measures,
    # so the next repetition can reclaim this one's space
    for object_id in ids:
        producer.release(object_id)

    t1 = time.perf_counter_ns()
    views = consumer.get(ids, GET_TIMEOUT_MS)
    retrieval_ns = time.perf_counter_ns() - t1
    missing = sum(1 for v in views if v is None)
    if missing:
        raise PlasmaFlowError(f"{missing} objects missing after retrieval")

    # Sequential chunked read of every buffer into a reused scratch buffer;
    # only the copy (plus any remote access penalty) is inside the timed
    # windows, the audit digest runs between them.
    read_ns = 0
    bytes_read = 0
    for object_id, view in zip(ids, views):
        hasher = Hasher64()
        size = view.data_size
        offset = 0
        while offset < size:
            n = min(len(scratch), size - offset)
            chunk = scratch[:n]
            r0 = time.perf_counter_ns()
            view.read_into(chunk, offset)
            read_ns += time.perf_counter_ns() - r0
            hasher.update(chunk)
            offset += n
        bytes_read += size
        expected = producer.seal_checksums.get(object_id)
        if expected is not None and hasher.value != expected:
            report.audit_violations += 1
            log.error("checksum mismatch reading %r", object_id)
    if bytes_read != spec.footprint:
        raise PlasmaFlowError(
            f"read {bytes_read} bytes, expected {spec.footprint}"
        )

    for object_id in ids:
        consumer.release(object_id)
    producer.seal_checksums.clear()

    throughput = spec.footprint / (read_ns / 1e9) if read_ns else 0.0
    return [
        MeasurementRecord(spec.bench_id, spec.scenario, repetition,
                          Phase.CREATE_WRITE_SEAL, create_ns, "ns"),
        MeasurementRecord(spec.bench_id, spec.scenario, repetition,
                          Phase.RETRIEVAL, retrieval_ns, "ns"),
        MeasurementRecord(spec.bench_id, spec.scenario, repetition,
                          Phase.READ, throughput, "bytes_per_second"),
    ]


def _release_quietly(session: ClientSession) -> None:
    try:
        session.release_all()
    except PlasmaFlowError:
        pass
    session.seal_checksums.clear()


# -- statistics ---------------------------------------------------------------

@dataclass(frozen=True)
class SummaryStats:
    count: int
    minimum: float
    p50: float
    mean: float
    p95: float
    maximum: float
    stddev: float


def _percentile(ordered: list[float], q: float) -> float:
    """Linear interpolation between closest ranks over a sorted sample."""
    if not ordered:
        raise EmptySample("percentile of an empty sample")
    rank = (len(ordered) - 1) * q / 100.0
    lo = math.floor(rank)
    hi = math.ceil(rank)
    if lo == hi:
        return ordered[lo]
    return ordered[lo] + (ordered[hi] - ordered[lo]) * (rank - lo)


def summarize(
    records: list[MeasurementRecord],
) -> dict[tuple[int, Scenario, Phase], SummaryStats]:
    """Exact order statistics per (bench, scenario, phase) group."""
    if not records:
        raise EmptySample("no measurement records")
    groups: dict[tuple[int, Scenario, Phase], list[float]] = {}
    for record in records:
        key = (record.bench_id, record.scenario, record.phase)
        groups.setdefault(key, []).append(record.value)
    out = {}
    for key, values in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2].value)):
        ordered = sorted(values)
        n = len(ordered)
        mean = sum(ordered) / n
        if n > 1:
            stddev = math.sqrt(sum((v - mean) ** 2 for v in ordered) / (n - 1))
        else:
            stddev = 0.0
        out[key] = SummaryStats(
            count=n,
            minimum=ordered[0],
            p50=_percentile(ordered, 50.0),
            mean=mean,
            p95=_percentile(ordered, 95.0),
            maximum=ordered[-1],
            stddev=stddev,
        )
    return out


# -- record emission -----------------------------------------------------------

_COLUMNS = ("bench_id", "scenario", "repetition", "phase", "value", "unit")


def emit(records: list[MeasurementRecord], fmt: str, path: str) -> None:
    """Write records as CSV (with a header row) or a JSON array."""
    rows = [
        {
            "bench_id": r.bench_id,
            "scenario": r.scenario.value,
            "repetition": r.repetition,
            "phase": r.phase.value,
            "value": r.value,
            "unit": r.unit,
        }
        for r in records
    ]
    try:
        if fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as handle:
                writer = csv.DictWriter(handle, fieldnames=_COLUMNS)
                writer.writeheader()
                writer.writerows(rows)
        elif fmt == "json":
            with open(path, "w", encoding="utf-8") as handle:
                json.dump(rows, handle, indent=1)
                handle.write("\n")
        else:
            raise ValueError(f"unknown format {fmt!r} (expected csv or json)")
    except OSError as exc:
        raise IoFailure(f"cannot write records to {path}: {exc}") from exc


def load_records(fmt: str, path: str) -> list[MeasurementRecord]:
    """Read back a file produced by emit (round-trip helper)."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            if fmt == "csv":
                rows = list(csv.DictReader(handle))
            elif fmt == "json":
                rows = json.load(handle)
            else:
                raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise IoFailure(f"cannot read records from {path}: {exc}") from exc
    return [
        MeasurementRecord(
            bench_id=int(row["bench_id"]),
            scenario=Scenario(row["scenario"]),
            repetition=int(row["repetition"]),
            phase=Phase(row["phase"]),
            value=float(row["value"]),
            unit=row["unit"],
        )
        for row in rows
    ]
