"""Set-associative non-blocking cache with an MSHR file and writeback buffer.

The cache is a passive state machine: the engine calls :meth:`Cache.access`
for requests from above, :meth:`Cache.fill` when the next level returns a
line, and :meth:`Cache.wb_drain` once per cycle. When either the MSHR file
or the writeback buffer is full the whole cache is blocked and every
request, hit or miss, from any core is rejected.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional


class Outcome(enum.Enum):
    HIT = "hit"
    MISS_ALLOCATED = "miss"
    MERGED = "merged"
    BLOCKED = "blocked"


class AccessResult(NamedTuple):
    outcome: Outcome
    latency: int = 0
    mshr_id: Optional[int] = None


BLOCKED = AccessResult(Outcome.BLOCKED)


@dataclass(frozen=True)
class CacheConfig:
    sets: int
    ways: int
    line_size: int = 64
    num_mshrs: int = 8
    wb_entries: int = 8
    hit_latency: int = 1
    partition: Optional[tuple[tuple[int, int], ...]] = None  # (core, way bitmask) pairs

    def __post_init__(self):
        if self.sets < 1 or self.ways < 1:
            raise ValueError("sets and ways must be >= 1")
        if self.num_mshrs < 1 or self.wb_entries < 1:
            raise ValueError("num_mshrs and wb_entries must be >= 1")
        if self.line_size < 1 or self.line_size & (self.line_size - 1):
            raise ValueError("line_size must be a power of two")
        if self.partition is not None:
            pairs = self.partition.items() if isinstance(self.partition, Mapping) else self.partition
            pairs = tuple(sorted((int(c), int(m)) for c, m in pairs))
            object.__setattr__(self, "partition", pairs)
            check_partition(dict(pairs), self.ways)

    @classmethod
    def of_size(cls, size: int, ways: int, line_size: int = 64, **kw) -> "CacheConfig":
        sets, rem = divmod(size, ways * line_size)
        if rem or sets < 1:
            raise ValueError(f"size {size} not divisible into {ways} ways of {line_size} B lines")
        return cls(sets=sets, ways=ways, line_size=line_size, **kw)

    @property
    def size(self) -> int:
        return self.sets * self.ways * self.line_size


def check_partition(partition: Mapping[int, int], ways: int) -> None:
    full = (1 << ways) - 1
    seen = 0
    for core, mask in sorted(partition.items()):
        if mask <= 0:
            raise ValueError(f"core {core}: empty way mask")
        if mask & ~full:
            raise ValueError(f"core {core}: way mask {mask:#x} exceeds {ways} ways")
        if mask & seen:
            raise ValueError(f"core {core}: way mask {mask:#x} overlaps another core")
        seen |= mask


def quarter_partition(ways: int, cores: int) -> dict[int, int]:
    """Equal disjoint way slices, core 0 owning the lowest ways."""
    per = ways // cores
    if per < 1:
        raise ValueError(f"cannot split {ways} ways among {cores} cores")
    return {c: ((1 << per) - 1) << (c * per) for c in range(cores)}


@dataclass
class Mshr:
    id: int
    line: int
    kind: str                       # "read" or "write" fill
    owner: int                      # core whose miss allocated the entry
    alloc_cycle: int
    requesters: list = field(default_factory=list)


@dataclass
class WbEntry:
    line: int
    enqueue_cycle: int


class FillResult(NamedTuple):
    requesters: list
    evicted: Optional[int]          # evicted line number, if any
    evicted_dirty: bool


class Cache:
    def __init__(self, config: CacheConfig, name: str = "cache"):
        self.config = config
        self.name = name
        sets, ways = config.sets, config.ways
        self._shift = config.line_size.bit_length() - 1
        self.tags = [[-1] * ways for _ in range(sets)]
        self.dirty = [[False] * ways for _ in range(sets)]
        self.stamp = [[0] * ways for _ in range(sets)]
        self.owner = [[-1] * ways for _ in range(sets)]
        self._where: dict[int, int] = {}          # line -> way
        self._clock = 0
        self.partition: dict[int, int] = dict(config.partition or {})
        self._all_ways = tuple(range(ways))
        self._way_lists = {c: tuple(w for w in range(ways) if m >> w & 1)
                           for c, m in self.partition.items()}
        self._num_mshrs = config.num_mshrs
        self._wb_cap = config.wb_entries
        self.mshrs: dict[int, Mshr] = {}
        self._mshr_by_line: dict[int, int] = {}
        self._next_mshr = 0
        self.wb: deque[WbEntry] = deque()
        self.live_reads = 0
        # counters
        self.hits = 0
        self.misses = 0
        self.merges = 0
        self.blocked_cycles = 0
        self.wb_stalls = 0
        self.rejected = 0
        self.max_mshr_occupancy = 0
        self.cross_evictions: dict[tuple[int, int], int] = {}   # (evicting core, owner) -> count

    # -- state ---------------------------------------------------------------

    @property
    def blocked(self) -> bool:
        return len(self.mshrs) >= self._num_mshrs or len(self.wb) >= self._wb_cap

    def line_of(self, addr: int) -> int:
        return addr >> self._shift

    def contains(self, addr: int) -> bool:
        return (addr >> self._shift) in self._where

    def is_dirty(self, addr: int) -> bool:
        line = addr >> self._shift
        way = self._where.get(line)
        return way is not None and self.dirty[line % self.config.sets][way]

    def way_of(self, addr: int) -> Optional[int]:
        return self._where.get(addr >> self._shift)

    def set_partition(self, core: int, way_mask: int) -> None:
        trial = dict(self.partition)
        trial[core] = way_mask
        check_partition(trial, self.config.ways)
        self.partition = trial
        self._way_lists[core] = tuple(w for w in range(self.config.ways) if way_mask >> w & 1)

    # -- requests from above -------------------------------------------------

    def access(self, core: int, addr: int, is_write: bool, cycle: int,
               requester=None) -> AccessResult:
        if len(self.mshrs) >= self._num_mshrs or len(self.wb) >= self._wb_cap:
            self.rejected += 1
            return BLOCKED
        line = addr >> self._shift
        way = self._where.get(line)
        if way is not None:
            s = line % self.config.sets
            self._clock += 1
            self.stamp[s][way] = self._clock
            if is_write:
                self.dirty[s][way] = True
            self.hits += 1
            return AccessResult(Outcome.HIT, self.config.hit_latency)
        self.misses += 1
        mid = self._mshr_by_line.get(line)
        if mid is not None:
            m = self.mshrs[mid]
            m.requesters.append((requester, is_write))
            if is_write:
                m.kind = "write"
            self.merges += 1
            return AccessResult(Outcome.MERGED, 0, mid)
        mid = self._next_mshr
        self._next_mshr += 1
        self.mshrs[mid] = Mshr(mid, line, "write" if is_write else "read", core, cycle,
                               [(requester, is_write)])
        self._mshr_by_line[line] = mid
        self.live_reads += 1
        if len(self.mshrs) > self.max_mshr_occupancy:
            self.max_mshr_occupancy = len(self.mshrs)
        return AccessResult(Outcome.MISS_ALLOCATED, 0, mid)

    def write_in(self, core: int, addr: int, cycle: int) -> bool:
        """Accept a full-line writeback from the level above.

        Hit marks the line dirty; miss installs it dirty without a fetch.
        Returns False (nothing changed) when blocked or when the install
        would need a writeback slot that is not free.
        """
        if self.blocked:
            self.rejected += 1
            return False
        line = addr >> self._shift
        s = line % self.config.sets
        way = self._where.get(line)
        self._clock += 1
        if way is not None:
            self.stamp[s][way] = self._clock
            self.dirty[s][way] = True
            self.hits += 1
            return True
        mid = self._mshr_by_line.get(line)
        if mid is not None:
            # the line is already being fetched; the fill will install it dirty
            self.mshrs[mid].kind = "write"
            return True
        way = self._victim_way(s, core)
        if self.tags[s][way] >= 0 and self.dirty[s][way] and len(self.wb) >= self.config.wb_entries:
            return False
        self._install(s, way, line, True, core, cycle)
        return True

    def warm_access(self, core: int, addr: int, is_write: bool) -> Optional[tuple[int, bool]]:
        """Functional (untimed) access used to pre-load cache state.

        Installs the line on a miss with no MSHR, no writeback-buffer entry
        and no counter updates. Returns the evicted ``(line, dirty)``, if any.
        """
        line = addr >> self._shift
        s = line % self.config.sets
        self._clock += 1
        way = self._where.get(line)
        if way is not None:
            self.stamp[s][way] = self._clock
            if is_write:
                self.dirty[s][way] = True
            return None
        way = self._victim_way(s, core)
        old = self.tags[s][way]
        evicted = (old, self.dirty[s][way]) if old >= 0 else None
        if old >= 0:
            del self._where[old]
        self.tags[s][way] = line
        self.dirty[s][way] = is_write
        self.owner[s][way] = core
        self.stamp[s][way] = self._clock
        self._where[line] = way
        return evicted

    # -- responses from below ------------------------------------------------

    def fill(self, mshr_id: int, cycle: int) -> Optional[FillResult]:
        """Install the line for a live MSHR; None means deferred (writeback buffer full)."""
        m = self.mshrs.get(mshr_id)
        if m is None:
            raise KeyError(f"{self.name}: unknown MSHR id {mshr_id}")
        s = m.line % self.config.sets
        way = self._victim_way(s, m.owner)
        if (self.tags[s][way] >= 0 and self.dirty[s][way]
                and len(self.wb) >= self.config.wb_entries):
            self.wb_stalls += 1
            return None
        evicted, ev_dirty = self._install(s, way, m.line, m.kind == "write", m.owner, cycle)
        del self.mshrs[mshr_id]
        del self._mshr_by_line[m.line]
        self.live_reads -= 1
        return FillResult(m.requesters, evicted, ev_dirty)

    def _victim_way(self, s: int, core: int) -> int:
        ways = self._way_lists.get(core, self._all_ways) if self.partition else self._all_ways
        tags = self.tags[s]
        stamp = self.stamp[s]
        best = -1
        best_stamp = None
        for w in ways:
            if tags[w] < 0:
                return w
            if best_stamp is None or stamp[w] < best_stamp:
                best, best_stamp = w, stamp[w]
        return best

    def _install(self, s: int, way: int, line: int, dirty: bool, core: int, cycle: int):
        old = self.tags[s][way]
        evicted, ev_dirty = None, False
        if old >= 0:
            evicted, ev_dirty = old, self.dirty[s][way]
            del self._where[old]
            prev = self.owner[s][way]
            if prev != core:
                key = (core, prev)
                self.cross_evictions[key] = self.cross_evictions.get(key, 0) + 1
            if ev_dirty:
                self.wb.append(WbEntry(old, cycle))
        self.tags[s][way] = line
        self.dirty[s][way] = dirty
        self.owner[s][way] = core
        self._clock += 1
        self.stamp[s][way] = self._clock
        self._where[line] = way
        return evicted, ev_dirty

    # -- writeback buffer ----------------------------------------------------

    def wb_drain(self, cycle: int) -> list[int]:
        """Lines to write back this cycle: the oldest entry, when no reads are
        outstanding or the buffer is full. At most one per cycle."""
        if self.wb and (self.live_reads == 0 or len(self.wb) >= self.config.wb_entries):
            return [self.wb.popleft().line]
        return []

    def wb_wants_drain(self) -> bool:
        return bool(self.wb) and (self.live_reads == 0
                                  or len(self.wb) >= self.config.wb_entries)

    def wb_pop(self) -> int:
        return self.wb.popleft().line


def wb_drain_policy(cache: Cache, cycle: int) -> list[int]:
    return cache.wb_drain(cycle)
