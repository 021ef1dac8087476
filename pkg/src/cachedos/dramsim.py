"""Open-page DRAM with per-bank row buffers and an FR-FCFS scheduler.

Timings are given in DRAM clock cycles and converted to CPU cycles with
``scale = cpu_freq / (transfer_rate / 2)`` (DDR: two transfers per clock),
rounded up. One request is in service per bank and at most one request
starts per cycle across the whole device.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .addrmap import AddressMapping, Decoder, DramCoord, DramGeometry

MIN_RATE = 100
MAX_RATE = 3200

TIMING_PRESETS = {
    "ddr-generic": dict(tRCD=14, tRP=14, tCL=14, tBURST=4),
    "ddr3-2133": dict(tRCD=14, tRP=14, tCL=14, tBURST=4),
}


@dataclass(frozen=True)
class DramConfig:
    geometry: DramGeometry
    mapping: AddressMapping
    tRCD: int = 14
    tRP: int = 14
    tCL: int = 14
    tBURST: int = 4
    transfer_rate: int = 1600       # MT/s
    cpu_freq: int = 2000            # MHz
    scheduler_window: int = 8

    def __post_init__(self):
        for name in ("tRCD", "tRP", "tCL", "tBURST"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        check_rate(self.transfer_rate)
        if self.cpu_freq < 1:
            raise ValueError("cpu_freq must be >= 1")
        if self.scheduler_window < 1:
            raise ValueError("scheduler_window must be >= 1")
        if 1 << self.mapping.bit_count != self.geometry.num_banks:
            raise ValueError("mapping bank-bit count disagrees with geometry.num_banks")

    @property
    def scale(self) -> float:
        return self.cpu_freq / (self.transfer_rate / 2)

    def to_cpu(self, dram_cycles: int) -> int:
        # ceil(dram_cycles * cpu_freq * 2 / transfer_rate) in exact integer arithmetic
        return -(-dram_cycles * self.cpu_freq * 2 // self.transfer_rate)

    def with_rate(self, transfer_rate: int) -> "DramConfig":
        return dataclasses.replace(self, transfer_rate=transfer_rate)


def check_rate(rate: int) -> None:
    if not MIN_RATE <= rate <= MAX_RATE:
        raise ValueError(f"transfer rate {rate} MT/s outside [{MIN_RATE}, {MAX_RATE}]")


class ReqKind(enum.Enum):
    READ = "read"
    WRITEBACK = "writeback"


class RowOutcome(enum.Enum):
    HIT = "hit"
    CLOSED = "closed"
    CONFLICT = "conflict"


@dataclass
class MemRequest:
    id: int
    kind: ReqKind
    coord: DramCoord
    arrival: int
    tag: object = None              # opaque back-reference for the caller


@dataclass
class BankState:
    open_row: Optional[int] = None
    busy_until: int = 0


def row_outcome(bank: BankState, coord: DramCoord) -> RowOutcome:
    if bank.open_row is None:
        return RowOutcome.CLOSED
    if bank.open_row == coord.row:
        return RowOutcome.HIT
    return RowOutcome.CONFLICT


def service_time(bank: BankState, coord: DramCoord, config: DramConfig) -> int:
    outcome = row_outcome(bank, coord)
    dram = config.tCL + config.tBURST
    if outcome is RowOutcome.CLOSED:
        dram += config.tRCD
    elif outcome is RowOutcome.CONFLICT:
        dram += config.tRP + config.tRCD
    return config.to_cpu(dram)


class Dram:
    def __init__(self, config: DramConfig):
        self.config = config
        self.decode = Decoder(config.geometry, config.mapping)
        self.banks = [BankState() for _ in range(config.geometry.num_banks)]
        self.pending: list[MemRequest] = []           # arrival order
        self._ids: set[int] = set()
        self._active: dict[int, tuple[int, MemRequest]] = {}   # bank -> (finish, req)
        cfg = config
        self._t_hit = cfg.to_cpu(cfg.tCL + cfg.tBURST)
        self._t_closed = cfg.to_cpu(cfg.tRCD + cfg.tCL + cfg.tBURST)
        self._t_conflict = cfg.to_cpu(cfg.tRP + cfg.tRCD + cfg.tCL + cfg.tBURST)
        self.row_hits = 0
        self.row_conflicts = 0
        self.row_closed = 0
        self.bank_requests = [0] * config.geometry.num_banks
        self._window = config.scheduler_window
        self._next_finish: Optional[int] = None
        self._last_start = -1
        self.started_order: list[int] = []
        self.record_order = False

    def enqueue(self, req: MemRequest, cycle: int) -> None:
        if req.id in self._ids:
            raise ValueError(f"duplicate request id {req.id}")
        self._ids.add(req.id)
        req.arrival = cycle
        self.pending.append(req)
        self.bank_requests[req.coord.bank] += 1

    def schedule(self, cycle: int) -> Optional[int]:
        """Start at most one request; FR-FCFS over the oldest scheduler_window entries."""
        if not self.pending or cycle == self._last_start:
            return None
        banks = self.banks
        pending = self.pending
        active = self._active
        chosen = -1
        fallback = -1
        for i in range(min(len(pending), self._window)):
            req = pending[i]
            if req.arrival >= cycle:
                continue
            b, row, _ = req.coord
            if b in active:
                continue
            bank = banks[b]
            if bank.busy_until > cycle:
                continue
            if bank.open_row == row:
                chosen = i
                break
            if fallback < 0:
                fallback = i
        if chosen < 0:
            chosen = fallback
        if chosen < 0:
            return None
        req = self.pending.pop(chosen)
        bank = banks[req.coord.bank]
        if bank.open_row is None:
            t = self._t_closed
            self.row_closed += 1
        elif bank.open_row == req.coord.row:
            t = self._t_hit
            self.row_hits += 1
        else:
            t = self._t_conflict
            self.row_conflicts += 1
        bank.busy_until = cycle + t
        self._last_start = cycle
        self._active[req.coord.bank] = (cycle + t, req)
        if self._next_finish is None or cycle + t < self._next_finish:
            self._next_finish = cycle + t
        if self.record_order:
            self.started_order.append(req.id)
        return req.id

    def complete(self, cycle: int) -> list[MemRequest]:
        if self._next_finish is None or cycle < self._next_finish:
            return []
        done = []
        nxt = None
        for b, (finish, req) in list(self._active.items()):
            if finish == cycle:
                del self._active[b]
                self.banks[b].open_row = req.coord.row
                self._ids.discard(req.id)
                done.append(req)
            elif nxt is None or finish < nxt:
                nxt = finish
        self._next_finish = nxt
        done.sort(key=lambda r: r.id)
        return done

    def next_event(self, cycle: int) -> Optional[int]:
        """Earliest future cycle at which complete() or schedule() could act."""
        best = self._next_finish
        for req in self.pending[:self._window]:
            t = req.arrival + 1
            if t > cycle and (best is None or t < best):
                best = t
        return best

    @property
    def idle(self) -> bool:
        return not self.pending and not self._active

    @property
    def outstanding(self) -> int:
        return len(self.pending) + len(self._active)


def parse_timing(text: str, source: str = "<timing>") -> dict[str, int]:
    """Parse ``key = integer`` lines naming DramConfig timing fields."""
    allowed = {"tRCD", "tRP", "tCL", "tBURST", "transfer_rate", "cpu_freq", "scheduler_window"}
    out: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (p.strip() for p in line.partition("="))
        if not sep or key not in allowed:
            raise ValueError(f"{source}:{lineno}: bad timing line {raw.strip()!r}")
        try:
            out[key] = int(value, 0)
        except ValueError:
            raise ValueError(f"{source}:{lineno}: {key} needs an integer, got {value!r}") from None
    return out


def load_timing(path: Union[str, Path]) -> dict[str, int]:
    path = Path(path)
    return parse_timing(path.read_text(), str(path))
