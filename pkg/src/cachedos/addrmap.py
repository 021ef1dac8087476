"""Physical address to DRAM coordinate decoding.

Two mapping forms are supported: a plain bank mask (bank bit i is the
address bit at the i-th set position of the mask) and an XOR mapping
(bank bit i is the parity of a set of address bits). Masks are
canonicalized to XOR singletons wherever both forms have to be handled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np

ADDR_BITS = 48
HUGEPAGE_SHIFT = 21
HUGEPAGE_SIZE = 1 << HUGEPAGE_SHIFT
SMALLPAGE_SIZE = 4096
MAX_BANK_BITS = 8


class BankBitsNotControllable(ValueError):
    """A bank-selecting bit lies outside the hugepage offset."""


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class BankMask:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        object.__setattr__(self, "bits", bits)
        if not 1 <= len(bits) <= MAX_BANK_BITS:
            raise ValueError(f"bank mask needs 1..{MAX_BANK_BITS} bits, got {len(bits)}")
        if any(b < 0 or b >= ADDR_BITS for b in bits):
            raise ValueError(f"bank bit out of range [0, {ADDR_BITS}): {bits}")
        if any(a >= b for a, b in zip(bits, bits[1:])):
            raise ValueError(f"bank bits must be strictly increasing: {bits}")

    @classmethod
    def from_int(cls, mask: int) -> "BankMask":
        return cls(tuple(b for b in range(ADDR_BITS) if mask >> b & 1))

    @property
    def value(self) -> int:
        return sum(1 << b for b in self.bits)

    @property
    def bit_count(self) -> int:
        return len(self.bits)

    @property
    def all_bits(self) -> frozenset[int]:
        return frozenset(self.bits)

    def as_xor(self) -> "XorMapping":
        return XorMapping(tuple((b,) for b in self.bits))


@dataclass(frozen=True)
class XorMapping:
    functions: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        funcs = tuple(tuple(sorted(set(int(b) for b in f))) for f in self.functions)
        object.__setattr__(self, "functions", funcs)
        if not 1 <= len(funcs) <= MAX_BANK_BITS:
            raise ValueError(f"XOR mapping needs 1..{MAX_BANK_BITS} functions")
        for f in funcs:
            if not f:
                raise ValueError("empty XOR function")
            if any(b < 0 or b >= ADDR_BITS for b in f):
                raise ValueError(f"XOR bit out of range [0, {ADDR_BITS}): {f}")

    @property
    def bit_count(self) -> int:
        return len(self.functions)

    @property
    def all_bits(self) -> frozenset[int]:
        return frozenset(b for f in self.functions for b in f)

    def as_xor(self) -> "XorMapping":
        return self


AddressMapping = Union[BankMask, XorMapping]


@dataclass(frozen=True)
class DramGeometry:
    num_banks: int
    row_size: int
    line_size: int = 64

    def __post_init__(self):
        for name in ("num_banks", "row_size", "line_size"):
            if not _is_pow2(getattr(self, name)):
                raise ValueError(f"{name} must be a power of two")
        if self.line_size > self.row_size:
            raise ValueError("line_size must not exceed row_size")

    @property
    def lines_per_row(self) -> int:
        return self.row_size // self.line_size


class DramCoord(NamedTuple):
    bank: int
    row: int
    col: int


@dataclass(frozen=True)
class HugePageRegion:
    base_phys: int
    size: int

    def __post_init__(self):
        if self.base_phys % HUGEPAGE_SIZE:
            raise ValueError(f"hugepage region base {self.base_phys:#x} not 2 MiB aligned")
        if self.size <= 0 or self.size % HUGEPAGE_SIZE:
            raise ValueError("hugepage region size must be a positive multiple of 2 MiB")
        if self.base_phys + self.size > 1 << ADDR_BITS:
            raise ValueError("hugepage region exceeds the physical address space")


def bank_of_mask(mask: BankMask, addr: int) -> int:
    bank = 0
    for idx, bit in enumerate(mask.bits):
        if addr >> bit & 1:
            bank |= 1 << idx
    return bank


def bank_of_xor(xm: XorMapping, addr: int) -> int:
    bank = 0
    for idx, func in enumerate(xm.functions):
        parity = 0
        for bit in func:
            parity ^= addr >> bit & 1
        bank |= parity << idx
    return bank


def bank_of(mapping: AddressMapping, addr: int) -> int:
    if isinstance(mapping, BankMask):
        return bank_of_mask(mapping, addr)
    return bank_of_xor(mapping, addr)


def _removed_bits(mapping: AddressMapping) -> tuple[int, ...]:
    """One representative bit per bank function, dropped before row/column split.

    For a mask these are the bank bits themselves. For XOR functions the
    highest not-yet-chosen bit of each function is used, and the choice must
    leave the address recoverable from (bank, compressed address).
    """
    if isinstance(mapping, BankMask):
        return mapping.bits
    chosen: list[int] = []
    for func in mapping.functions:
        free = [b for b in func if b not in chosen]
        if not free:
            raise ValueError(f"XOR mapping not decomposable: {mapping.functions}")
        chosen.append(max(free))
    # the functions restricted to the chosen bits must be invertible over GF(2)
    rows = [sum(1 << chosen.index(b) for b in func if b in chosen) for func in mapping.functions]
    rank = 0
    for col in range(len(chosen)):
        pivot = next((i for i in range(rank, len(rows)) if rows[i] >> col & 1), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        for i in range(len(rows)):
            if i != rank and rows[i] >> col & 1:
                rows[i] ^= rows[rank]
        rank += 1
    if rank != len(chosen):
        raise ValueError(f"XOR mapping not decomposable: {mapping.functions}")
    return tuple(sorted(chosen))


def compress(addr: int, removed: Sequence[int]) -> int:
    """Delete the given bit positions from addr, closing the gaps."""
    for bit in sorted(removed, reverse=True):
        low = addr & ((1 << bit) - 1)
        addr = (addr >> (bit + 1)) << bit | low
    return addr


def coord_of(geom: DramGeometry, mapping: AddressMapping, addr: int) -> DramCoord:
    if 1 << mapping.bit_count != geom.num_banks:
        raise ValueError(
            f"mapping selects {1 << mapping.bit_count} banks but geometry has {geom.num_banks}"
        )
    addr -= addr % geom.line_size
    bank = bank_of(mapping, addr)
    line = compress(addr, _removed_bits(mapping)) // geom.line_size
    lpr = geom.lines_per_row
    return DramCoord(bank, line // lpr, line % lpr)


class Decoder:
    """Precomputed coord_of for one (geometry, mapping) pair; used on hot paths."""

    def __init__(self, geom: DramGeometry, mapping: AddressMapping):
        if 1 << mapping.bit_count != geom.num_banks:
            raise ValueError(
                f"mapping selects {1 << mapping.bit_count} banks but geometry has {geom.num_banks}"
            )
        self.geom = geom
        self.mapping = mapping
        self._funcs = mapping.as_xor().functions
        self._removed = sorted(_removed_bits(mapping), reverse=True)
        self._line_shift = geom.line_size.bit_length() - 1
        self._col_bits = geom.lines_per_row.bit_length() - 1
        self._col_mask = geom.lines_per_row - 1
        self._cache: dict[int, DramCoord] = {}

    def __call__(self, addr: int) -> DramCoord:
        line = addr >> self._line_shift
        hit = self._cache.get(line)
        if hit is not None:
            return hit
        a = line << self._line_shift
        bank = 0
        for idx, func in enumerate(self._funcs):
            parity = 0
            for bit in func:
                parity ^= a >> bit & 1
            bank |= parity << idx
        for bit in self._removed:
            a = (a >> (bit + 1)) << bit | (a & ((1 << bit) - 1))
        cl = a >> self._line_shift
        coord = DramCoord(bank, cl >> self._col_bits, cl & self._col_mask)
        self._cache[line] = coord
        return coord


def controllable_bits(page_size: int) -> range:
    if page_size == SMALLPAGE_SIZE:
        return range(0, 12)
    if page_size == HUGEPAGE_SIZE:
        return range(0, HUGEPAGE_SHIFT)
    raise ValueError(f"unsupported page size {page_size}")


def check_controllable(mapping: AddressMapping, page_size: int = HUGEPAGE_SIZE) -> None:
    ctrl = controllable_bits(page_size)
    bad = sorted(b for b in mapping.all_bits if b not in ctrl)
    if bad:
        raise BankBitsNotControllable(
            f"bank bits {bad} lie outside the {ctrl.stop}-bit page offset"
        )


def banks_of_array(mapping: AddressMapping, addrs: np.ndarray) -> np.ndarray:
    """Vectorized bank_of over a uint64 array."""
    addrs = np.asarray(addrs, dtype=np.uint64)
    bank = np.zeros(addrs.shape, dtype=np.int64)
    for idx, func in enumerate(mapping.as_xor().functions):
        parity = np.zeros(addrs.shape, dtype=np.uint64)
        for bit in func:
            parity ^= (addrs >> np.uint64(bit)) & np.uint64(1)
        bank |= parity.astype(np.int64) << idx
    return bank


def same_bank_lines(
    region: HugePageRegion, mapping: AddressMapping, geom: DramGeometry, target_bank: int
) -> list[int]:
    """Every line in a hugepage-backed region that decodes to target_bank."""
    check_controllable(mapping)
    if not 0 <= target_bank < 1 << mapping.bit_count:
        raise ValueError(f"target bank {target_bank} out of range")
    addrs = np.arange(
        region.base_phys, region.base_phys + region.size, geom.line_size, dtype=np.uint64
    )
    keep = addrs[banks_of_array(mapping, addrs) == target_bank]
    return keep.tolist()


def region_for_lines(
    lines: int, mapping: AddressMapping, line_size: int = 64, base: int = 0
) -> HugePageRegion:
    """Smallest hugepage region holding `lines` same-bank lines (bank bits < 21)."""
    need = lines * line_size * (1 << mapping.bit_count)
    pages = max(1, math.ceil(need / HUGEPAGE_SIZE))
    return HugePageRegion(base, pages * HUGEPAGE_SIZE)


# -- mapping files -----------------------------------------------------------

def parse_mapping(text: str, source: str = "<mapping>") -> tuple[AddressMapping, DramGeometry]:
    """Parse the plain-text mapping format.

    ``bit <n>`` and ``xor <n1> <n2> ...`` lines define bank bits in order;
    ``banks``, ``row_size`` and ``line_size`` set the geometry.
    """
    funcs: list[tuple[int, ...]] = []
    all_plain = True
    header = {"banks": None, "row_size": 2048, "line_size": 64}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        try:
            if key == "bit" and len(args) == 1:
                funcs.append((int(args[0], 0),))
            elif key == "xor" and args:
                funcs.append(tuple(int(a, 0) for a in args))
                all_plain = False
            elif key in header and len(args) == 1:
                header[key] = int(args[0], 0)
            else:
                raise ValueError(f"unrecognized directive {key!r}")
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}: {raw.strip()!r}") from None
    if not funcs:
        raise ValueError(f"{source}: no bank bits defined")
    if all_plain and list(funcs) == sorted(funcs) and len(set(funcs)) == len(funcs):
        mapping: AddressMapping = BankMask(tuple(f[0] for f in funcs))
    else:
        mapping = XorMapping(tuple(funcs))
    banks = header["banks"] if header["banks"] is not None else 1 << mapping.bit_count
    geom = DramGeometry(banks, header["row_size"], header["line_size"])
    if banks != 1 << mapping.bit_count:
        raise ValueError(f"{source}: banks {banks} disagrees with {mapping.bit_count} bank bits")
    return mapping, geom


def load_mapping(path: Union[str, Path]) -> tuple[AddressMapping, DramGeometry]:
    path = Path(path)
    return parse_mapping(path.read_text(), str(path))


def format_mapping(mapping: AddressMapping, geom: DramGeometry) -> str:
    out = [f"banks {geom.num_banks}", f"row_size {geom.row_size}", f"line_size {geom.line_size}"]
    if isinstance(mapping, BankMask):
        out += [f"bit {b}" for b in mapping.bits]
    else:
        out += ["xor " + " ".join(str(b) for b in f) for f in mapping.functions]
    return "\n".join(out) + "\n"
