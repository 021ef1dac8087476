"""Cycle-driven multicore memory system: cores -> private L1D -> shared LLC -> DRAM.

Each simulated cycle runs these phases in order:

1. DRAM completions; read completions fill the LLC (deferred while the LLC
   writeback buffer has no room for a dirty victim).
2. Timers: LLC hit responses fill the L1, L1 hits complete at the core.
3. Deferred L1 fills retry.
4. LLC writeback drain (one line per cycle) and one DRAM scheduling decision.
5. LLC arbitration: every core presents one request, an L1 writeback that
   must drain or else its oldest L1 miss. Order is round-robin from
   ``cycle % cores``; on the cycle after the LLC was blocked, waiting cores
   are served lowest id first.
6. Each core issues at most one new access, subject to its window, its
   throttle budget and its program's dependencies.

Before the first cycle every program's lap is run through the caches
functionally (no timing), so measurements start from steady-state cache
contents. Cycles in which nothing can change are skipped in one step, with
the per-cycle counters advanced by the skipped length.
"""
from __future__ import annotations

import dataclasses
import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .cachesim import Cache, CacheConfig, Outcome, quarter_partition
from .dramsim import DramConfig, Dram, MemRequest, ReqKind, check_rate
from .workload import AccessProgram, ProgramCursor, WorkloadSpec, build_program

EPOCH = 1000
WARMUP_LAPS = 1

# timer kinds
_CORE_DONE = 0
_LLC_RESP = 1


@dataclass(frozen=True)
class CoreConfig:
    window: int = 16
    in_order: bool = False
    throttle: Optional[int] = None   # max LLC-bound accesses per EPOCH cycles

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.throttle is not None and self.throttle < 1:
            raise ValueError("throttle must be >= 1")

    @property
    def effective_window(self) -> int:
        return 1 if self.in_order else self.window


@dataclass(frozen=True)
class SimConfig:
    cores: tuple[CoreConfig, ...]
    l1: CacheConfig
    llc: CacheConfig
    dram: DramConfig
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "cores", tuple(self.cores))
        if not self.cores:
            raise ValueError("at least one core is required")
        if self.l1.line_size != self.llc.line_size:
            raise ValueError("L1 and LLC line sizes differ")
        if self.dram.geometry.line_size != self.llc.line_size:
            raise ValueError("DRAM line size differs from the caches")

    @property
    def line_size(self) -> int:
        return self.llc.line_size

    @property
    def partitioned(self) -> bool:
        return self.llc.partition is not None

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def with_rate(self, rate: int) -> "SimConfig":
        return self.replace(dram=self.dram.with_rate(rate))

    def with_partition(self, on: bool = True) -> "SimConfig":
        part = quarter_partition(self.llc.ways, len(self.cores)) if on else None
        return self.replace(llc=dataclasses.replace(self.llc, partition=part))

    def with_attackers(self, **core_fields) -> "SimConfig":
        """Apply CoreConfig field overrides to every core except core 0."""
        cores = (self.cores[0],) + tuple(dataclasses.replace(c, **core_fields)
                                        for c in self.cores[1:])
        return self.replace(cores=cores)


def apply_throttle(sim: SimConfig, core: int, budget: Optional[int]) -> SimConfig:
    if budget is not None and budget < 1:
        raise ValueError("throttle budget must be >= 1 per epoch")
    cores = list(sim.cores)
    cores[core] = dataclasses.replace(cores[core], throttle=budget)
    return sim.replace(cores=tuple(cores))


@dataclass
class CoreMetrics:
    issued: int = 0
    completed: int = 0
    l1_hits: int = 0
    l1_misses: int = 0
    llc_hits: int = 0
    llc_misses: int = 0
    blocked_cycles: int = 0
    stall_cycles: int = 0

    def minus(self, other: "CoreMetrics") -> "CoreMetrics":
        return CoreMetrics(**{f.name: getattr(self, f.name) - getattr(other, f.name)
                              for f in dataclasses.fields(self)})


@dataclass
class Metrics:
    """Counters for one run.

    Per-core, LLC and DRAM counters cover the measured window only: from the
    end of the victim's warm-up lap to the end of its last lap. ``issued_total``
    and ``completed_total`` cover the whole run including the final drain.
    """

    total_cycles: int
    measured_cycles: int
    victim_iterations: int
    warmup_laps: int
    cores: list[CoreMetrics]
    bank_accesses: list[int]
    dram_row_hits: int
    dram_row_conflicts: int
    dram_row_closed: int
    dram_reads: int
    dram_writebacks: int
    llc_blocked_cycles: int
    llc_max_mshr_occupancy: int
    issued_total: list[int] = field(default_factory=list)
    completed_total: list[int] = field(default_factory=list)
    cross_evictions: dict = field(default_factory=dict)

    @property
    def victim(self) -> CoreMetrics:
        return self.cores[0]

    @property
    def cycles_per_iter(self) -> float:
        return self.measured_cycles / self.victim_iterations


@dataclass(frozen=True)
class ExperimentResult:
    solo_cycles_per_iter: float
    corun_cycles_per_iter: float
    solo: Metrics
    corun: Metrics

    @property
    def slowdown(self) -> float:
        return self.corun_cycles_per_iter / self.solo_cycles_per_iter


class _Core:
    __slots__ = ("id", "cfg", "window", "throttle", "cursor", "l1", "ready", "out_q",
                 "l1_deferred", "inflight", "epoch", "epoch_used", "m", "stopped",
                 "dependent", "lap_len")

    def __init__(self, cid: int, cfg: CoreConfig, l1cfg: CacheConfig,
                 program: Optional[AccessProgram]):
        self.id = cid
        self.cfg = cfg
        self.window = cfg.effective_window
        self.throttle = cfg.throttle
        self.cursor = ProgramCursor(program) if program is not None else None
        self.l1 = Cache(l1cfg, f"l1.{cid}")
        self.dependent = program is not None and program.dependent
        self.ready = deque(range(program.chain_count)) if program is not None else deque()
        self.out_q: deque = deque()          # (ready_cycle, l1 mshr id, addr)
        self.l1_deferred: deque = deque()    # l1 mshr ids whose fill is waiting on the L1 wb buffer
        self.inflight = 0
        self.epoch = 0
        self.epoch_used = 0
        self.m = CoreMetrics()
        self.stopped = program is None
        self.lap_len = program.accesses_per_lap if program is not None else 0


class Simulator:
    def __init__(self, sim: SimConfig, programs: Sequence[Optional[AccessProgram]]):
        if len(programs) > len(sim.cores):
            raise ValueError(f"{len(programs)} programs for {len(sim.cores)} cores")
        if not programs or programs[0] is None:
            raise ValueError("core 0 must host the victim program")
        for p in programs:
            if p is not None and p.line_size != sim.line_size:
                raise ValueError(f"program line size {p.line_size} != cache line size {sim.line_size}")
        progs = list(programs) + [None] * (len(sim.cores) - len(programs))
        self.sim = sim
        self.cores = [_Core(i, c, sim.l1, p) for i, (c, p) in enumerate(zip(sim.cores, progs))]
        self.llc = Cache(sim.llc, "llc")
        self.dram = Dram(sim.dram)
        self.cycle = 0
        self._timers: list = []
        self._seq = 0
        self._llc_deferred: deque = deque()
        self._req_id = 0
        self._llc_blocked_prev = False
        self._active = False
        self.dram_reads = 0
        self.dram_writebacks = 0

    # -- helpers ---------------------------------------------------------------

    def _timer(self, when: int, kind: int, a, b) -> None:
        self._seq += 1
        heapq.heappush(self._timers, (when, self._seq, kind, a, b))

    def _dram_request(self, kind: ReqKind, addr: int, tag, cycle: int) -> None:
        req = MemRequest(self._req_id, kind, self.dram.decode(addr), cycle, tag)
        self._req_id += 1
        self.dram.enqueue(req, cycle)
        if kind is ReqKind.READ:
            self.dram_reads += 1
        else:
            self.dram_writebacks += 1

    def _complete_access(self, core: _Core, chain: int) -> None:
        core.cursor.complete(chain)
        core.inflight -= 1
        core.m.completed += 1
        if core.dependent:
            core.ready.append(chain)

    def _l1_fill(self, core: _Core, mid: int, cycle: int) -> bool:
        res = core.l1.fill(mid, cycle)
        if res is None:
            return False
        for chain, _ in res.requesters:
            self._complete_access(core, chain)
        return True

    def _llc_fill(self, mid: int, cycle: int) -> bool:
        res = self.llc.fill(mid, cycle)
        if res is None:
            return False
        for (cid, l1mid), _ in res.requesters:
            core = self.cores[cid]
            if not self._l1_fill(core, l1mid, cycle):
                core.l1_deferred.append(l1mid)
        return True

    # -- one cycle ---------------------------------------------------------------

    def step(self) -> None:
        t = self.cycle
        active = False
        cores = self.cores
        llc = self.llc
        dram = self.dram

        # 1. DRAM completions -> LLC fills
        for req in dram.complete(t):
            active = True
            if req.kind is ReqKind.READ:
                self._llc_deferred.append(req.tag)
        while self._llc_deferred:
            if not self._llc_fill(self._llc_deferred[0], t):
                break
            self._llc_deferred.popleft()
            active = True

        # 2. timers
        timers = self._timers
        while timers and timers[0][0] <= t:
            _, _, kind, a, b = heapq.heappop(timers)
            active = True
            core = cores[a]
            if kind == _CORE_DONE:
                self._complete_access(core, b)
            elif not self._l1_fill(core, b, t):
                core.l1_deferred.append(b)

        # 3. deferred L1 fills
        for core in cores:
            while core.l1_deferred:
                if not self._l1_fill(core, core.l1_deferred[0], t):
                    break
                core.l1_deferred.popleft()
                active = True

        # 4. LLC writeback drain, DRAM scheduling
        if llc.wb_wants_drain():
            line = llc.wb_pop()
            self._dram_request(ReqKind.WRITEBACK, line * self.sim.line_size, None, t)
            active = True
        if dram.schedule(t) is not None:
            active = True

        # 5. LLC arbitration
        n = len(cores)
        if self._llc_blocked_prev:
            order = range(n)
        else:
            start = t % n
            order = [(start + i) % n for i in range(n)]
        rejected = []
        for cid in order:
            core = cores[cid]
            l1 = core.l1
            if l1.wb_wants_drain():
                # a pending writeback takes the core's slot ahead of its read
                addr = l1.wb[0].line * self.sim.line_size
                if llc.write_in(cid, addr, t):
                    l1.wb_pop()
                    active = True
                else:
                    rejected.append(core)
                continue
            q = core.out_q
            if not q or q[0][0] > t:
                continue
            _, l1mid, addr = q[0]
            res = llc.access(cid, addr, False, t, requester=(cid, l1mid))
            oc = res.outcome
            if oc is Outcome.BLOCKED:
                rejected.append(core)
                continue
            q.popleft()
            active = True
            if oc is Outcome.HIT:
                core.m.llc_hits += 1
                self._timer(t + res.latency, _LLC_RESP, cid, l1mid)
            else:
                core.m.llc_misses += 1
                if oc is Outcome.MISS_ALLOCATED:
                    self._dram_request(ReqKind.READ, addr, res.mshr_id, t)
        for core in rejected:
            core.m.blocked_cycles += 1

        # 6. core issue
        stalled = []
        throttled = False
        for core in cores:
            if core.stopped:
                continue
            if core.throttle is not None and t // EPOCH != core.epoch:
                core.epoch = t // EPOCH
                core.epoch_used = 0
            if (core.inflight >= core.window or not core.ready or core.l1.blocked
                    or (core.throttle is not None and core.epoch_used >= core.throttle)):
                if core.throttle is not None and core.epoch_used >= core.throttle:
                    throttled = True
                stalled.append(core)
                continue
            chain = core.ready[0]
            addr, is_write = core.cursor.peek(chain)
            res = core.l1.access(core.id, addr, is_write, t, requester=chain)
            oc = res.outcome
            if oc is Outcome.BLOCKED:
                stalled.append(core)
                continue
            core.cursor.issue(chain)
            if core.dependent:
                core.ready.popleft()
            core.inflight += 1
            core.m.issued += 1
            active = True
            if oc is Outcome.HIT:
                core.m.l1_hits += 1
                self._timer(t + res.latency, _CORE_DONE, core.id, chain)
            else:
                core.m.l1_misses += 1
                if oc is Outcome.MISS_ALLOCATED:
                    core.out_q.append((t + core.l1.config.hit_latency, res.mshr_id, addr))
                    if core.throttle is not None:
                        core.epoch_used += 1
        for core in stalled:
            core.m.stall_cycles += 1

        blocked = llc.blocked
        if blocked:
            llc.blocked_cycles += 1
        self._llc_blocked_prev = blocked and bool(rejected)

        # advance, skipping cycles in which nothing can change
        nxt = t + 1
        if not active:
            cand = []
            if timers:
                cand.append(timers[0][0])
            d = dram.next_event(t)
            if d is not None:
                cand.append(d)
            for core in cores:
                if core.out_q and core.out_q[0][0] > t:
                    cand.append(core.out_q[0][0])
            if throttled:
                cand.append((t // EPOCH + 1) * EPOCH)
            if not cand:
                raise RuntimeError(f"simulation deadlocked at cycle {t}")
            nxt = max(min(cand), t + 1)
            skip = nxt - t - 1
            if skip:
                for core in rejected:
                    core.m.blocked_cycles += skip
                for core in stalled:
                    core.m.stall_cycles += skip
                if blocked:
                    llc.blocked_cycles += skip
        self.cycle = nxt

    # -- driver ------------------------------------------------------------------

    def warm_caches(self) -> None:
        """Run one lap of every program through the caches functionally.

        Laps are interleaved in proportion to their length, so the final LLC
        contents mix the cores as a long concurrent run would. Lines written
        by the program end up dirty, as they would in steady state.
        """
        streams = [_timed_lap(core.id, core.cursor.program)
                   for core in self.cores if core.cursor is not None]
        llc = self.llc
        shift = self.sim.line_size.bit_length() - 1
        for _, cid, addr in heapq.merge(*streams):
            core = self.cores[cid]
            is_write = core.cursor.program.is_write
            l1 = core.l1
            if l1.contains(addr):
                l1.warm_access(cid, addr, is_write)
                continue
            llc.warm_access(cid, addr, False)
            evicted = l1.warm_access(cid, addr, is_write)
            if evicted is not None and evicted[1]:
                llc.warm_access(cid, evicted[0] << shift, True)

    def snapshot(self):
        return ([dataclasses.replace(c.m) for c in self.cores],
                list(self.dram.bank_requests),
                (self.dram.row_hits, self.dram.row_conflicts, self.dram.row_closed,
                 self.dram_reads, self.dram_writebacks, self.llc.blocked_cycles))

    def run(self, stop: int, max_cycles: Optional[int] = None) -> Metrics:
        if stop < 1:
            raise ValueError("stop must be >= 1 lap")
        if self.cycle == 0:
            self.warm_caches()
        victim = self.cores[0]
        warm_target = WARMUP_LAPS * victim.lap_len
        end_target = (WARMUP_LAPS + stop) * victim.lap_len
        while victim.cursor.completed < warm_target:
            self.step()
            self._check_limit(max_cycles)
        t0 = self.cycle
        snap0 = self.snapshot()
        self.llc.max_mshr_occupancy = len(self.llc.mshrs)
        while victim.cursor.completed < end_target:
            self.step()
            self._check_limit(max_cycles)
        t1 = self.cycle
        snap1 = self.snapshot()
        occ = self.llc.max_mshr_occupancy
        for core in self.cores:
            core.stopped = True
        while any(c.inflight for c in self.cores):
            self.step()
            self._check_limit(max_cycles)
        cores = [b.minus(a) for a, b in zip(snap0[0], snap1[0])]
        banks = [b - a for a, b in zip(snap0[1], snap1[1])]
        d = [b - a for a, b in zip(snap0[2], snap1[2])]
        return Metrics(
            total_cycles=self.cycle,
            measured_cycles=t1 - t0,
            victim_iterations=stop,
            warmup_laps=WARMUP_LAPS,
            cores=cores,
            bank_accesses=banks,
            dram_row_hits=d[0],
            dram_row_conflicts=d[1],
            dram_row_closed=d[2],
            dram_reads=d[3],
            dram_writebacks=d[4],
            llc_blocked_cycles=d[5],
            llc_max_mshr_occupancy=occ,
            issued_total=[c.m.issued for c in self.cores],
            completed_total=[c.m.completed for c in self.cores],
            cross_evictions=dict(self.llc.cross_evictions),
        )

    def _check_limit(self, max_cycles: Optional[int]) -> None:
        if max_cycles is not None and self.cycle > max_cycles:
            raise RuntimeError(f"run exceeded {max_cycles} cycles")


def _lap_order(prog: AccessProgram):
    """Node addresses of one lap, chains interleaved one node at a time."""
    chains = prog.chains
    longest = max(len(c) for c in chains)
    for k in range(longest):
        for chain in chains:
            if k < len(chain):
                yield chain[k]


def _timed_lap(cid: int, prog: AccessProgram):
    total = prog.node_count
    for k, addr in enumerate(_lap_order(prog)):
        yield k / total, cid, addr


def run(sim: SimConfig, programs: Sequence[Optional[AccessProgram]], stop: int,
        max_cycles: Optional[int] = None) -> Metrics:
    return Simulator(sim, programs).run(stop, max_cycles)


# -- experiments -----------------------------------------------------------------

CORE_STRIDE = 1 << 34   # physical distance between per-core allocations


def core_base(core: int) -> int:
    return core * CORE_STRIDE


def build_for_core(sim: SimConfig, spec: WorkloadSpec, core: int) -> AccessProgram:
    if spec.line_size != sim.line_size:
        raise ValueError(f"workload line size {spec.line_size} != cache line size {sim.line_size}")
    return build_program(spec, sim.dram.mapping, sim.dram.geometry, core_base(core))


_program_cache: dict = {}


def _cached_program(sim: SimConfig, spec: WorkloadSpec, core: int) -> AccessProgram:
    key = (spec, core, sim.dram.mapping, sim.dram.geometry)
    prog = _program_cache.get(key)
    if prog is None:
        if len(_program_cache) > 64:
            _program_cache.clear()
        prog = _program_cache[key] = build_for_core(sim, spec, core)
    return prog


def attacker_spec_for_core(attacker: WorkloadSpec, core: int) -> WorkloadSpec:
    return dataclasses.replace(attacker, seed=(attacker.seed + core) % (1 << 64))


def corun_programs(sim: SimConfig, victim: WorkloadSpec, attacker: Optional[WorkloadSpec],
                   n_attackers: int) -> list[Optional[AccessProgram]]:
    if not 0 <= n_attackers <= len(sim.cores) - 1:
        raise ValueError(f"n_attackers={n_attackers} needs {n_attackers + 1} cores, "
                         f"have {len(sim.cores)}")
    progs: list[Optional[AccessProgram]] = [_cached_program(sim, victim, 0)]
    for core in range(1, n_attackers + 1):
        progs.append(_cached_program(sim, attacker_spec_for_core(attacker, core), core))
    return progs


_solo_cache: dict = {}


def solo_run(sim: SimConfig, victim: WorkloadSpec, laps: int) -> Metrics:
    key = (sim, victim, laps)
    m = _solo_cache.get(key)
    if m is None:
        if len(_solo_cache) > 256:
            _solo_cache.clear()
        m = _solo_cache[key] = run(sim, corun_programs(sim, victim, None, 0), laps)
    return m


def solo_vs_corun(sim: SimConfig, victim: WorkloadSpec, attacker: Optional[WorkloadSpec],
                  n_attackers: int, laps: int = 1) -> ExperimentResult:
    solo = solo_run(sim, victim, laps)
    if n_attackers == 0:
        corun = run(sim, corun_programs(sim, victim, None, 0), laps)
    else:
        if attacker is None:
            raise ValueError("attacker spec required when n_attackers > 0")
        corun = run(sim, corun_programs(sim, victim, attacker, n_attackers), laps)
    return ExperimentResult(solo.cycles_per_iter, corun.cycles_per_iter, solo, corun)


def sweep_memfreq(sim: SimConfig, victim: WorkloadSpec, attacker: WorkloadSpec,
                  rates: Sequence[int], n_attackers: Optional[int] = None,
                  laps: int = 1) -> list[tuple[int, ExperimentResult]]:
    if not rates:
        raise ValueError("rates must be non-empty")
    for r in rates:
        check_rate(r)
    n = len(sim.cores) - 1 if n_attackers is None else n_attackers
    return [(r, solo_vs_corun(sim.with_rate(r), victim, attacker, n, laps)) for r in rates]

