"""Test-side helpers, kept deliberately independent of the implementation.

LinearScanOracle re-implements best-fit allocation the slow, obvious way
(scan every free region, pick the smallest that fits, lowest offset on
ties) so allocator behavior can be replayed and compared step by step.
"""

from __future__ import annotations

import bisect
import socket


def round8(size: int) -> int:
    return (size + 7) & ~7


class LinearScanOracle:
    """Reference best-fit allocator over an address-ordered free list."""

    def __init__(self, capacity: int, coalesce: bool = True):
        self.capacity = capacity
        self.coalesce = coalesce
        self.free: list[list[int]] = [[0, capacity]]  # [offset, size], address order
        self.allocated: dict[int, int] = {}

    def allocate(self, size: int) -> int | None:
        """Returns the chosen offset, or None when nothing fits."""
        assert size > 0
        size = round8(size)
        best = None
        for i, (_, region_size) in enumerate(self.free):
            if region_size >= size and (best is None or region_size < self.free[best][1]):
                best = i
        if best is None:
            return None
        offset, region_size = self.free[best]
        if region_size == size:
            self.free.pop(best)
        else:
            self.free[best] = [offset + size, region_size - size]
        self.allocated[offset] = size
        return offset

    def deallocate(self, offset: int) -> None:
        size = self.allocated.pop(offset)
        idx = bisect.bisect_left([entry[0] for entry in self.free], offset)
        self.free.insert(idx, [offset, size])
        if not self.coalesce:
            return
        if idx + 1 < len(self.free) and offset + size == self.free[idx + 1][0]:
            self.free[idx][1] += self.free[idx + 1][1]
            self.free.pop(idx + 1)
        if idx > 0 and self.free[idx - 1][0] + self.free[idx - 1][1] == offset:
            self.free[idx - 1][1] += self.free[idx][1]
            self.free.pop(idx)

    def bytes_in_use(self) -> int:
        return sum(self.allocated.values())

    def free_regions(self) -> list[tuple[int, int]]:
        return [(offset, size) for offset, size in self.free]

    def check_tiling(self) -> None:
        extents = sorted(
            [tuple(entry) for entry in self.free] + list(self.allocated.items())
        )
        cursor = 0
        for offset, size in extents:
            assert offset == cursor, f"oracle tiling broken at {cursor}"
            cursor = offset + size
        assert cursor == self.capacity


def free_tcp_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]
