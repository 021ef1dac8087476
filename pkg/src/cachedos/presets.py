"""Named platform configurations and their default workloads."""
from __future__ import annotations

from dataclasses import dataclass

from .addrmap import BankMask, DramGeometry
from .cachesim import CacheConfig
from .dramsim import DramConfig
from .engine import CoreConfig, SimConfig
from .workload import WorkloadKind, WorkloadSpec

KiB = 1 << 10
MiB = 1 << 20

ATTACKER_MLP = 8


def _sim(name, *, cpu_freq, l1_size, l1_ways, l1_mshrs, llc_size, llc_ways, llc_mshrs,
         bank_bits, row_size, transfer_rate, l1_wb=4, llc_wb=8, l1_lat=4, llc_lat=20,
         window=16, cores=4, timing=(14, 14, 14, 4), scheduler_window=8):
    mask = BankMask(tuple(bank_bits))
    geom = DramGeometry(1 << mask.bit_count, row_size, 64)
    tRCD, tRP, tCL, tBURST = timing
    return SimConfig(
        cores=tuple(CoreConfig(window=window) for _ in range(cores)),
        l1=CacheConfig.of_size(l1_size, l1_ways, num_mshrs=l1_mshrs, wb_entries=l1_wb,
                               hit_latency=l1_lat),
        llc=CacheConfig.of_size(llc_size, llc_ways, num_mshrs=llc_mshrs, wb_entries=llc_wb,
                                hit_latency=llc_lat),
        dram=DramConfig(geom, mask, tRCD=tRCD, tRP=tRP, tCL=tCL, tBURST=tBURST,
                        transfer_rate=transfer_rate, cpu_freq=cpu_freq,
                        scheduler_window=scheduler_window),
        name=name,
    )


PRESETS = {
    # Odroid-XU4, Cortex-A15 cluster: 2 MiB/16-way L2 with 11 outstanding reads, LPDDR3.
    # L1 MSHRs and the controller queue depth are not published; the LPDDR presets
    # use a shallow 4-entry scheduler window.
    "xu4-a15": lambda: _sim("xu4-a15", cpu_freq=2000, l1_size=32 * KiB, l1_ways=2, l1_mshrs=4,
                            llc_size=2 * MiB, llc_ways=16, llc_mshrs=11,
                            bank_bits=(8, 13, 14, 15, 16), row_size=4 * KiB,
                            transfer_rate=1866, scheduler_window=4),
    # Raspberry Pi 4, Cortex-A72: 1 MiB/16-way L2 with 19 outstanding reads, LPDDR4
    "pi4-a72": lambda: _sim("pi4-a72", cpu_freq=1500, l1_size=32 * KiB, l1_ways=2, l1_mshrs=6,
                            llc_size=1 * MiB, llc_ways=16, llc_mshrs=19,
                            bank_bits=(11, 12, 13, 14), row_size=2 * KiB,
                            transfer_rate=3200, scheduler_window=4),
    # FireSim quad-core medium BOOM: L1D 6 MSHRs, 512 KiB LLC with 11 MSHRs, DDR3-2133
    "boom-medium": lambda: _sim("boom-medium", cpu_freq=2130, l1_size=32 * KiB, l1_ways=2,
                                l1_mshrs=6, llc_size=512 * KiB, llc_ways=16, llc_mshrs=11,
                                bank_bits=(15, 16, 17), row_size=32 * KiB,
                                transfer_rate=2133),
    # Raspberry Pi 3, Cortex-A53: 512 KiB L2, LPDDR2 at 900 MT/s (adjustable sdram_freq)
    "pi3-lpddr2": lambda: _sim("pi3-lpddr2", cpu_freq=1200, l1_size=32 * KiB, l1_ways=4,
                               l1_mshrs=4, llc_size=512 * KiB, llc_ways=16, llc_mshrs=8,
                               bank_bits=(12, 13, 14), row_size=4 * KiB,
                               transfer_rate=900, scheduler_window=4),
}

PRESET_NAMES = tuple(PRESETS)


def load_preset(name: str) -> SimConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


@dataclass(frozen=True)
class Workloads:
    """Default victim/attacker sizing for a platform."""

    victim_llc: int      # fits the LLC, exceeds the L1
    victim_dram: int     # exceeds the LLC
    attacker: int        # attacker working sets always exceed the LLC


def default_workloads(sim: SimConfig) -> Workloads:
    return Workloads(victim_llc=3 * sim.l1.size, victim_dram=sim.llc.size + sim.llc.size // 4,
                     attacker=2 * sim.llc.size)


def victim_spec(sim: SimConfig, fits: str = "LLC", seed: int = 0) -> WorkloadSpec:
    w = default_workloads(sim)
    ws = w.victim_llc if fits.upper() == "LLC" else w.victim_dram
    return WorkloadSpec(WorkloadKind.SEQ_READ, ws, sim.line_size, seed=seed)


def attacker_spec(sim: SimConfig, kind: WorkloadKind, seed: int = 1,
                  mlp: int = ATTACKER_MLP, target_bank: int = 0) -> WorkloadSpec:
    w = default_workloads(sim)
    return WorkloadSpec(kind, w.attacker, sim.line_size, mlp=mlp,
                        target_bank=target_bank if kind.is_bank_aware else None, seed=seed)
