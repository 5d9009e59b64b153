"""Arena allocator: best-fit over a size-ordered free-region index.

Replaces a general-purpose malloc with the simplest thing that works for
an object store: free regions are indexed by (size, offset) in an ordered
structure, so the smallest region that can accommodate a request is found
with a logarithmic lookup (ties broken by lowest offset). Region
boundaries are additionally tracked in two plain maps (start -> size and
end -> start) so deallocation coalesces adjacent free regions with O(1)
neighbor checks. No size classes, no locality heuristics, no alignment
beyond rounding request sizes up to 8 bytes.

Not internally synchronized; the store serializes all calls under its
table lock.
"""

from __future__ import annotations

from dataclasses import dataclass

from sortedcontainers import SortedList

from .errors import InvalidSize, OutOfMemory, UnknownOffset

ALIGNMENT = 8


def round_up(size: int) -> int:
    return (size + ALIGNMENT - 1) & ~(ALIGNMENT - 1)


@dataclass(frozen=True)
class FreeRegion:
    offset: int
    size: int


@dataclass(frozen=True)
class AllocatorStats:
    capacity: int
    bytes_in_use: int
    free_region_count: int
    largest_free_region: int


class Allocator:
    """Tracks one arena's free regions and live allocations.

    Invariant: free regions and allocated extents are pairwise disjoint and
    together tile [0, capacity). With coalescing enabled (the default) no
    two adjacent free regions exist.
    """

    def __init__(self, capacity: int, coalesce: bool = True):
        if capacity <= 0:
            raise InvalidSize(f"arena capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.coalesce = coalesce
        self.bytes_in_use = 0
        # (size, offset) pairs; iteration order is the best-fit order
        self._free_index: SortedList = SortedList()
        self._free_start: dict[int, int] = {}  # start -> size
        self._free_end: dict[int, int] = {}    # end -> start
        self._allocated: dict[int, int] = {}
        self._insert_free(0, capacity)

    def _insert_free(self, offset: int, size: int) -> None:
        self._free_index.add((size, offset))
        self._free_start[offset] = size
        self._free_end[offset + size] = offset

    def _remove_free(self, offset: int, size: int) -> None:
        self._free_index.remove((size, offset))
        del self._free_start[offset]
        del self._free_end[offset + size]

    def allocate(self, size: int) -> int:
        """Return the offset of the smallest free region fitting size.

        The request is rounded up to the 8-byte alignment unit. The chosen
        region is split; any remainder returns to the free index.
        """
        if size <= 0:
            raise InvalidSize(f"allocation size must be positive, got {size}")
        size = round_up(size)
        free_index = self._free_index
        idx = free_index.bisect_left((size, -1))
        if idx >= len(free_index):
            raise OutOfMemory(
                f"no free region fits {size} bytes "
                f"(largest is {self.largest_free_region()})"
            )
        region_size, offset = free_index[idx]
        self._remove_free(offset, region_size)
        if region_size > size:
            self._insert_free(offset + size, region_size - size)
        self._allocated[offset] = size
        self.bytes_in_use += size
        return offset

    def deallocate(self, offset: int) -> None:
        """Return a previously allocated extent to the free index."""
        size = self._allocated.pop(offset, None)
        if size is None:
            raise UnknownOffset(f"offset {offset} is not allocated (double free?)")
        self.bytes_in_use -= size
        if self.coalesce:
            # absorb the free neighbor on each side, if any
            next_size = self._free_start.get(offset + size)
            if next_size is not None:
                self._remove_free(offset + size, next_size)
                size += next_size
            prev_start = self._free_end.get(offset)
            if prev_start is not None:
                prev_size = self._free_start[prev_start]
                self._remove_free(prev_start, prev_size)
                offset = prev_start
                size += prev_size
        self._insert_free(offset, size)

    def would_fit(self, size: int) -> bool:
        """True if allocate(size) would currently succeed."""
        if size <= 0:
            return False
        return self.largest_free_region() >= round_up(size)

    def allocation_size(self, offset: int) -> int:
        """Rounded size of the live allocation at offset."""
        try:
            return self._allocated[offset]
        except KeyError:
            raise UnknownOffset(f"offset {offset} is not allocated") from None

    def largest_free_region(self) -> int:
        if not self._free_index:
            return 0
        return self._free_index[-1][0]

    def stats(self) -> AllocatorStats:
        return AllocatorStats(
            capacity=self.capacity,
            bytes_in_use=self.bytes_in_use,
            free_region_count=len(self._free_start),
            largest_free_region=self.largest_free_region(),
        )

    def free_regions(self) -> list[FreeRegion]:
        """Free regions in address order (observability and tests)."""
        return [FreeRegion(o, s) for o, s in sorted(self._free_start.items())]

    def allocations(self) -> dict[int, int]:
        """Live offset -> rounded size map (copy)."""
        return dict(self._allocated)

    def check_tiling(self) -> None:
        """Assert free and allocated extents exactly tile [0, capacity)."""
        extents = sorted(
            list(self._free_start.items()) + list(self._allocated.items())
        )
        cursor = 0
        for offset, size in extents:
            if offset != cursor:
                raise AssertionError(
                    f"tiling violated: gap or overlap at {cursor}..{offset}"
                )
            cursor = offset + size
        if cursor != self.capacity:
            raise AssertionError(
                f"tiling violated: extents end at {cursor}, capacity {self.capacity}"
            )
        if len(self._free_index) != len(self._free_start):
            raise AssertionError("free indices disagree on region count")
