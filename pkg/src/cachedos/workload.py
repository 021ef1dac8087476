"""Attacker and victim access programs.

Sequential programs stream over an array with no data dependencies.
Linked-list programs traverse ``mlp`` independent pointer chains; a chain
only advances once its previous pointer load has completed, so the chain
count bounds the memory-level parallelism a core can extract.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .addrmap import (
    AddressMapping,
    DramGeometry,
    bank_of,
    region_for_lines,
    same_bank_lines,
)


class WorkloadKind(str, enum.Enum):
    SEQ_READ = "SeqRead"
    SEQ_WRITE = "SeqWrite"
    PLL_READ = "PllRead"
    PLL_WRITE = "PllWrite"
    BK_PLL_READ = "BkPllRead"
    BK_PLL_WRITE = "BkPllWrite"

    @property
    def is_sequential(self) -> bool:
        return self in (WorkloadKind.SEQ_READ, WorkloadKind.SEQ_WRITE)

    @property
    def is_write(self) -> bool:
        return self in (WorkloadKind.SEQ_WRITE, WorkloadKind.PLL_WRITE, WorkloadKind.BK_PLL_WRITE)

    @property
    def is_bank_aware(self) -> bool:
        return self in (WorkloadKind.BK_PLL_READ, WorkloadKind.BK_PLL_WRITE)

    @classmethod
    def parse(cls, text: str) -> "WorkloadKind":
        aliases = {"bwread": cls.SEQ_READ, "bwwrite": cls.SEQ_WRITE}
        key = text.strip().lower()
        if key in aliases:
            return aliases[key]
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"unknown workload kind {text!r}")


ATTACKER_KINDS = tuple(WorkloadKind)


@dataclass(frozen=True)
class WorkloadSpec:
    kind: WorkloadKind
    working_set: int
    line_size: int = 64
    mlp: int = 1
    target_bank: Optional[int] = None
    seed: int = 0
    iterations: int = 1

    def __post_init__(self):
        if self.line_size <= 0 or self.working_set <= 0:
            raise ValueError("working_set and line_size must be positive")
        if self.working_set % self.line_size:
            raise ValueError("working_set must be a multiple of line_size")
        if self.mlp < 1:
            raise ValueError("mlp must be >= 1")
        if self.kind.is_bank_aware and self.target_bank is None:
            raise ValueError(f"{self.kind.value} requires a target bank")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned value")

    @property
    def lines(self) -> int:
        return self.working_set // self.line_size


@dataclass(frozen=True)
class Node:
    address: int
    is_write: bool
    chain: int
    ordinal: int


@dataclass(frozen=True)
class AccessProgram:
    """Immutable access stream; ``chains[c][k]`` is the k-th line visited by chain c.

    ``dependent`` programs are pointer chases: node k+1's address is stored
    at node k. In write-kind chases every node is visited with a store
    followed by the pointer load, both to the node's line.
    """

    kind: WorkloadKind
    chains: tuple[tuple[int, ...], ...]
    dependent: bool
    laps: int = 1
    line_size: int = 64

    @property
    def is_write(self) -> bool:
        return self.kind.is_write

    @property
    def chain_count(self) -> int:
        return len(self.chains)

    @property
    def node_count(self) -> int:
        return sum(len(c) for c in self.chains)

    @property
    def accesses_per_node(self) -> int:
        return 2 if self.dependent and self.is_write else 1

    @property
    def accesses_per_lap(self) -> int:
        return self.node_count * self.accesses_per_node

    def nodes(self) -> Iterator[Node]:
        for c, chain in enumerate(self.chains):
            for k, addr in enumerate(chain):
                yield Node(addr, self.is_write, c, k)

    def accesses(self, chain: int, ordinal: int) -> list[tuple[int, bool]]:
        """The (address, is_write) accesses a visit to one node performs, in order."""
        addr = self.chains[chain][ordinal]
        if self.dependent and self.is_write:
            return [(addr, True), (addr, False)]
        return [(addr, self.is_write)]

    def dump(self) -> str:
        return "".join(
            f"chain={n.chain} ord={n.ordinal} addr=0x{n.address:x} w={int(n.is_write)}\n"
            for n in self.nodes()
        )


def classify_working_set(working_set: int, llc_size: int) -> str:
    return "LLC" if working_set < llc_size else "DRAM"


def build_sequential(spec: WorkloadSpec, base: int = 0) -> AccessProgram:
    if not spec.kind.is_sequential:
        raise ValueError(f"{spec.kind.value} is not a sequential kind")
    if spec.working_set < spec.line_size:
        raise ValueError("working_set smaller than one line")
    addrs = tuple(range(base, base + spec.working_set, spec.line_size))
    return AccessProgram(spec.kind, (addrs,), dependent=False, laps=spec.iterations,
                         line_size=spec.line_size)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sattolo_cycle(n: int, rng: np.random.Generator) -> list[int]:
    """Random cyclic permutation: succ[i] is the entry after i; one cycle of length n."""
    succ = list(range(n))
    if n < 2:
        return succ
    draws = rng.random(n)
    for i in range(n - 1, 0, -1):
        j = int(draws[i] * i)
        succ[i], succ[j] = succ[j], succ[i]
    return succ


def cycle_order(succ: Sequence[int], start: int = 0) -> list[int]:
    order = [start]
    nxt = succ[start]
    while nxt != start:
        order.append(nxt)
        nxt = succ[nxt]
    return order


def chain_sizes(total: int, mlp: int) -> list[int]:
    q, r = divmod(total, mlp)
    return [q + 1 if c < r else q for c in range(mlp)]


def build_parallel_lists(spec: WorkloadSpec, placer: Sequence[int]) -> AccessProgram:
    if spec.kind.is_sequential:
        raise ValueError(f"{spec.kind.value} is not a linked-list kind")
    n = spec.lines
    if len(placer) < n:
        raise ValueError(f"placer supplied {len(placer)} candidate lines, need {n}")
    if spec.mlp > n:
        raise ValueError(f"mlp {spec.mlp} exceeds line count {n}")
    rng = make_rng(spec.seed)
    pick = rng.permutation(len(placer))[:n]
    lines = [int(placer[i]) for i in pick]
    chains = []
    start = 0
    for size in chain_sizes(n, spec.mlp):
        members = lines[start:start + size]
        start += size
        order = cycle_order(sattolo_cycle(size, rng))
        chains.append(tuple(members[i] for i in order))
    return AccessProgram(spec.kind, tuple(chains), dependent=True, laps=spec.iterations,
                         line_size=spec.line_size)


def build_program(
    spec: WorkloadSpec,
    mapping: Optional[AddressMapping] = None,
    geom: Optional[DramGeometry] = None,
    base: int = 0,
) -> AccessProgram:
    """Build any kind, placing its lines at physical address ``base``."""
    if spec.kind.is_sequential:
        return build_sequential(spec, base)
    if spec.kind.is_bank_aware:
        if mapping is None or geom is None:
            raise ValueError(f"{spec.kind.value} needs a DRAM mapping")
        region = region_for_lines(spec.lines, mapping, spec.line_size, base)
        placer = same_bank_lines(region, mapping, geom, spec.target_bank)
    else:
        placer = range(base, base + spec.working_set, spec.line_size)
    return build_parallel_lists(spec, placer)


@dataclass
class ProgramCursor:
    """Execution state of one program on one core.

    Each chain has at most one access outstanding. Sequential programs have a
    single stream whose next access is always ready; the issuing core's
    window is what bounds them.
    """

    program: AccessProgram
    pos: list[int] = field(init=False)      # per-chain visit counter (unbounded, wraps modulo chain length)
    phase: list[int] = field(init=False)    # per-chain index into the node's access list
    busy: list[bool] = field(init=False)
    completed: int = 0
    issued: int = 0

    def __post_init__(self):
        n = self.program.chain_count
        self.pos = [0] * n
        self.phase = [0] * n
        self.busy = [False] * n
        self._lens = [len(c) for c in self.program.chains]
        self._per_node = self.program.accesses_per_node
        self._write = self.program.kind.is_write

    def ready(self) -> list[int]:
        if not self.program.dependent:
            return [0]
        return [c for c, b in enumerate(self.busy) if not b]

    def peek(self, chain: int) -> tuple[int, bool]:
        prog = self.program
        addr = prog.chains[chain][self.pos[chain] % self._lens[chain]]
        if self._per_node == 2:
            return addr, self.phase[chain] == 0
        return addr, self._write

    def issue(self, chain: int) -> tuple[int, bool]:
        addr, is_write = self.peek(chain)
        self.issued += 1
        if self.program.dependent:
            self.busy[chain] = True
        else:
            self.pos[chain] += 1
        return addr, is_write

    def complete(self, chain: int) -> None:
        self.completed += 1
        if not self.program.dependent:
            return
        self.busy[chain] = False
        if self._per_node == 2 and self.phase[chain] == 0:
            self.phase[chain] = 1
        else:
            self.phase[chain] = 0
            self.pos[chain] += 1

    @property
    def in_flight(self) -> int:
        return self.issued - self.completed


def ready_set(program: AccessProgram, state: ProgramCursor) -> set[tuple[int, int]]:
    """Issuable (chain, ordinal) pairs given the cursor's completion state."""
    if state.program is not program:
        raise ValueError("cursor belongs to a different program")
    out = set()
    for c in state.ready():
        if program.dependent:
            out.add((c, state.pos[c] % len(program.chains[c])))
        else:
            out.add((c, state.issued % len(program.chains[c])))
    return out


def bank_histogram(program: AccessProgram, mapping: AddressMapping, geom: DramGeometry) -> list[int]:
    hist = [0] * geom.num_banks
    for chain in program.chains:
        for addr in chain:
            hist[bank_of(mapping, addr)] += 1
    return hist

